//! Experiment execution.
//!
//! One run walks a grid: every attack config crossed with every defense
//! stack, over a shared query sample, plus an optional clean baseline on the
//! unpoisoned store. Poisons are crafted once per attack and reused across
//! that attack's cells, so refinement cost does not scale with the number of
//! defense stacks.
//!
//! Failure policy: budget exhaustion stops the whole run and the report is
//! returned as partial with a stop reason; any other provider failure is
//! recorded on its trial row and the run continues.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    craft_ak, craft_as, craft_pia, craft_prag_bb, inject_poisons, AttackConfig, AttackKind,
    PoisonedText,
};
use crate::corpus::{Document, StoreSnapshot, TargetedQuery};
use crate::defenses::{
    detect_and_filter, expand_knowledge, harden_system_prompt, paraphrase_query, BenignSource,
    DefenseKind, ExpansionConfig,
};
use crate::embedder::{Embedder, SimilarityMetric};
use crate::error::{Error, Result};
use crate::generator::{
    generate, ChatParams, ChatProvider, CostLedger, CostSnapshot, GenerationRequest, RagGenerator,
    DEFAULT_RAG_PROMPT,
};
use crate::harness::judge::AnswerJudge;
use crate::harness::{compute_metrics, MetricsSummary, TrialOutcome};

/// Everything a run can call. Optional providers are only required when the
/// spec actually uses them.
pub struct Providers<'a> {
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn RagGenerator,
    pub refiner: Option<&'a dyn ChatProvider>,
    pub paraphraser: Option<&'a dyn ChatProvider>,
    pub detector: Option<&'a dyn ChatProvider>,
    pub crafter: Option<&'a dyn ChatProvider>,
    pub expansion: Option<BenignSource<'a>>,
    pub judge: AnswerJudge<'a>,
    pub ledger: &'a CostLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub attacks: Vec<AttackConfig>,
    /// Each stack is a set of defenses active together; the empty stack is
    /// the undefended condition.
    pub defense_stacks: Vec<Vec<DefenseKind>>,
    /// Retrieval depth without the expansion defense.
    pub n: usize,
    pub metric: SimilarityMetric,
    pub expansion: ExpansionConfig,
    pub system_prompt: String,
    pub params: ChatParams,
    pub seed: u64,
    /// Evaluate only this many queries, sampled by seed; `None` runs all.
    pub sample_queries: Option<usize>,
    pub clean_baseline: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            attacks: vec![AttackConfig::default()],
            defense_stacks: vec![Vec::new()],
            n: 5,
            metric: SimilarityMetric::DotProduct,
            expansion: ExpansionConfig::default(),
            system_prompt: DEFAULT_RAG_PROMPT.to_string(),
            params: ChatParams::default(),
            seed: 0,
            sample_queries: None,
            clean_baseline: true,
        }
    }
}

/// Accuracy of the pipeline on the unpoisoned store, judged against the
/// correct answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanBaseline {
    pub accuracy: f64,
    pub trials: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub attack: AttackConfig,
    pub defenses: Vec<DefenseKind>,
    pub retrieval_depth: usize,
    /// Absent only when the run stopped before this cell finished a trial.
    pub metrics: Option<MetricsSummary>,
    pub trials: Vec<TrialOutcome>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n: usize,
    pub metric: SimilarityMetric,
    pub embedder: String,
    pub generator: String,
    pub judge: String,
    /// Stated whenever the judge's matching rule can overcount.
    pub judge_caveat: Option<String>,
    pub params: ChatParams,
    pub query_ids: Vec<String>,
    pub clean_baseline: Option<CleanBaseline>,
    pub cells: Vec<CellReport>,
    pub cost: CostSnapshot,
    /// True when the run stopped early (budget); consumers must not compare
    /// partial cells against complete ones.
    pub partial: bool,
    pub stop_reason: Option<String>,
}

/// Splits an error into "stop the run" (budget) and "fail this trial".
enum TrialError {
    Stop(String),
    Row(String),
}

fn split(error: Error) -> TrialError {
    match error {
        Error::BudgetExhausted(message) => TrialError::Stop(message),
        other => TrialError::Row(other.to_string()),
    }
}

struct TrialPlan<'p> {
    store: &'p StoreSnapshot,
    depth: usize,
    paraphrase: bool,
    detect: bool,
    system_prompt: &'p str,
    /// Answer the judge compares against.
    target: &'p str,
    verified_poison: Option<bool>,
}

fn validate(
    providers: &Providers<'_>,
    spec: &ExperimentSpec,
    store: &StoreSnapshot,
    queries: &[TargetedQuery],
) -> Result<()> {
    if spec.n == 0 {
        return Err(Error::InvalidArg("retrieval depth n must be at least 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::InvalidArg("no targeted queries to evaluate".into()));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if spec.sample_queries == Some(0) {
        return Err(Error::InvalidArg("query sample size must be at least 1".into()));
    }
    for attack in &spec.attacks {
        attack.validate()?;
        if attack.keyword_ablation.is_some()
            && !matches!(attack.variant, AttackKind::As | AttackKind::Ak)
        {
            return Err(Error::Config(format!(
                "keyword ablation applies only to template-based attacks, not {}",
                attack.variant
            )));
        }
        match attack.variant {
            AttackKind::Ak if providers.refiner.is_none() => {
                return Err(Error::Config(
                    "the ak attack needs a refiner provider".to_string(),
                ));
            }
            AttackKind::PragBb if providers.crafter.is_none() => {
                return Err(Error::Config(
                    "the prag-bb attack needs a crafter provider".to_string(),
                ));
            }
            _ => {}
        }
    }
    for stack in &spec.defense_stacks {
        let unique: BTreeSet<_> = stack.iter().collect();
        if unique.len() != stack.len() {
            return Err(Error::Config("a defense stack lists a defense twice".to_string()));
        }
        if stack.contains(&DefenseKind::Paraphrasing) && providers.paraphraser.is_none() {
            return Err(Error::Config(
                "the paraphrasing defense needs a paraphraser provider".to_string(),
            ));
        }
        if stack.contains(&DefenseKind::Detection) && providers.detector.is_none() {
            return Err(Error::Config(
                "the detection defense needs a detector provider".to_string(),
            ));
        }
        if stack.contains(&DefenseKind::KnowledgeExpansion) {
            if providers.expansion.is_none() {
                return Err(Error::Config(
                    "the knowledge expansion defense needs an expansion source".to_string(),
                ));
            }
            if spec.expansion.k == 0 || spec.expansion.expanded_n == 0 {
                return Err(Error::InvalidArg(
                    "expansion k and expanded_n must be at least 1".into(),
                ));
            }
        }
    }
    Ok(())
}

fn sample_queries<'q>(
    queries: &'q [TargetedQuery],
    spec: &ExperimentSpec,
) -> Vec<&'q TargetedQuery> {
    let mut indexes: Vec<usize> = (0..queries.len()).collect();
    if let Some(k) = spec.sample_queries {
        if k < indexes.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            indexes.shuffle(&mut rng);
            indexes.truncate(k);
            indexes.sort_unstable();
        }
    }
    indexes.into_iter().map(|i| &queries[i]).collect()
}

/// Crafts one poison for `query` under `attack`. Only template-free variants
/// consult providers.
pub fn craft_poison(
    providers: &Providers<'_>,
    attack: &AttackConfig,
    query: &TargetedQuery,
) -> Result<PoisonedText> {
    match attack.variant {
        AttackKind::As => craft_as(query, attack),
        AttackKind::Pia => craft_pia(query),
        AttackKind::Ak => craft_ak(
            query,
            attack,
            providers.refiner.expect("validated refiner"),
            providers.generator,
            providers.ledger,
        ),
        AttackKind::PragBb => craft_prag_bb(
            query,
            attack,
            providers.crafter.expect("validated crafter"),
            providers.ledger,
        ),
    }
}

/// Crafted poisons per query id; per-query failures are kept as messages so
/// their trials can report them. `Err` only on budget exhaustion.
fn craft_all(
    providers: &Providers<'_>,
    attack: &AttackConfig,
    queries: &[&TargetedQuery],
) -> std::result::Result<BTreeMap<String, std::result::Result<PoisonedText, String>>, String> {
    let mut crafted = BTreeMap::new();
    for query in queries {
        match craft_poison(providers, attack, query) {
            Ok(poison) => {
                crafted.insert(query.id.clone(), Ok(poison));
            }
            Err(error) => match split(error) {
                TrialError::Stop(message) => return Err(message),
                TrialError::Row(message) => {
                    crafted.insert(query.id.clone(), Err(message));
                }
            },
        }
    }
    Ok(crafted)
}

/// Runs retrieval, optional defenses, generation, and judging for one query.
/// `Err` carries a stop reason (budget); every other failure lands on the
/// returned row.
fn run_trial(
    providers: &Providers<'_>,
    spec: &ExperimentSpec,
    plan: &TrialPlan<'_>,
    query: &TargetedQuery,
) -> std::result::Result<TrialOutcome, String> {
    let mut row = TrialOutcome {
        query_id: query.id.clone(),
        generated_answer: String::new(),
        judged_match: false,
        poison_rank: None,
        contexts_used: 0,
        paraphrase_fell_back: None,
        poisons_judged: 0,
        poisons_flagged: 0,
        verified_poison: plan.verified_poison,
        error: None,
    };

    let retrieval_question = if plan.paraphrase {
        let paraphraser = providers.paraphraser.expect("validated paraphraser");
        match paraphrase_query(&query.question, paraphraser, &spec.params, providers.ledger) {
            Ok(outcome) => {
                row.paraphrase_fell_back = Some(outcome.fell_back);
                outcome.text
            }
            Err(error) => match split(error) {
                TrialError::Stop(message) => return Err(message),
                TrialError::Row(message) => {
                    row.error = Some(message);
                    return Ok(row);
                }
            },
        }
    } else {
        query.question.clone()
    };

    let retrieval = match crate::retriever::retrieve_top_n(
        providers.embedder,
        plan.store,
        &query.id,
        &retrieval_question,
        plan.depth,
        spec.metric,
    ) {
        Ok(result) => result,
        Err(error) => match split(error) {
            TrialError::Stop(message) => return Err(message),
            TrialError::Row(message) => {
                row.error = Some(message);
                return Ok(row);
            }
        },
    };
    row.poison_rank = plan
        .store
        .injected_for(&query.id)
        .and_then(|doc_id| retrieval.rank_of(doc_id));

    let mut contexts: Vec<Document> = Vec::with_capacity(retrieval.ranked.len());
    for ranked in &retrieval.ranked {
        match plan.store.get(&ranked.doc_id) {
            Some(doc) => contexts.push(doc.clone()),
            None => {
                row.error = Some(format!("ranked doc {} missing from store", ranked.doc_id));
                return Ok(row);
            }
        }
    }

    if plan.detect {
        let detector = providers.detector.expect("validated detector");
        match detect_and_filter(&contexts, detector, &spec.params, providers.ledger) {
            Ok(outcome) => {
                row.poisons_judged = outcome.poisons_judged;
                row.poisons_flagged = outcome.poisons_flagged;
                contexts = outcome.kept;
            }
            Err(error) => match split(error) {
                TrialError::Stop(message) => return Err(message),
                TrialError::Row(message) => {
                    row.error = Some(message);
                    return Ok(row);
                }
            },
        }
    }
    row.contexts_used = contexts.len();

    let request = GenerationRequest {
        system_prompt: plan.system_prompt.to_string(),
        contexts: contexts.into_iter().map(|d| d.text).collect(),
        question: query.question.clone(),
        params: spec.params,
    };
    let completion = match generate(providers.generator, &request, providers.ledger) {
        Ok(completion) => completion,
        Err(error) => match split(error) {
            TrialError::Stop(message) => return Err(message),
            TrialError::Row(message) => {
                row.error = Some(message);
                return Ok(row);
            }
        },
    };
    row.generated_answer = completion.text;

    match providers.judge.matches(&row.generated_answer, plan.target) {
        Ok(matched) => row.judged_match = matched,
        Err(error) => match split(error) {
            TrialError::Stop(message) => return Err(message),
            TrialError::Row(message) => row.error = Some(message),
        },
    }
    Ok(row)
}

/// Runs the full grid and returns a report. Budget exhaustion yields
/// `Ok` with `partial = true`; hard errors (config, validation, store
/// conflicts) yield `Err`.
pub fn run_experiment(
    providers: &Providers<'_>,
    spec: &ExperimentSpec,
    store: &StoreSnapshot,
    queries: &[TargetedQuery],
) -> Result<ExperimentReport> {
    let spec = {
        let mut spec = spec.clone();
        if spec.defense_stacks.is_empty() {
            spec.defense_stacks.push(Vec::new());
        }
        spec
    };
    validate(providers, &spec, store, queries)?;
    let hardened_prompt = if spec
        .defense_stacks
        .iter()
        .any(|s| s.contains(&DefenseKind::InstructionalPrevention))
    {
        Some(harden_system_prompt(&spec.system_prompt)?)
    } else {
        None
    };

    let selected = sample_queries(queries, &spec);
    let mut report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: spec.seed,
        n: spec.n,
        metric: spec.metric,
        embedder: format!(
            "{}/{}",
            providers.embedder.provider_id(),
            providers.embedder.model_id()
        ),
        generator: providers.generator.generator_id().to_string(),
        judge: providers.judge.label().to_string(),
        judge_caveat: match providers.judge {
            AnswerJudge::NormalizedSubstring => Some(
                "substring judge counts any answer containing the reference as a match; \
                 verbose answers can overcount"
                    .to_string(),
            ),
            AnswerJudge::Llm { .. } => None,
        },
        params: spec.params,
        query_ids: selected.iter().map(|q| q.id.clone()).collect(),
        clean_baseline: None,
        cells: Vec::new(),
        cost: providers.ledger.snapshot(),
        partial: false,
        stop_reason: None,
    };
    let mut stop: Option<String> = None;

    if spec.clean_baseline {
        let mut outcomes = Vec::new();
        for query in &selected {
            let plan = TrialPlan {
                store,
                depth: spec.n,
                paraphrase: false,
                detect: false,
                system_prompt: &spec.system_prompt,
                target: &query.correct_answer,
                verified_poison: None,
            };
            match run_trial(providers, &spec, &plan, query) {
                Ok(row) => outcomes.push(row),
                Err(reason) => {
                    stop = Some(reason);
                    break;
                }
            }
        }
        if !outcomes.is_empty() {
            let matches = outcomes.iter().filter(|o| o.judged_match).count();
            report.clean_baseline = Some(CleanBaseline {
                accuracy: matches as f64 / outcomes.len() as f64,
                trials: outcomes.len(),
                errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
            });
        }
    }

    let expansion_queries: Vec<(String, String, String)> = selected
        .iter()
        .map(|q| (q.id.clone(), q.question.clone(), q.correct_answer.clone()))
        .collect();

    'grid: for attack in &spec.attacks {
        if stop.is_some() {
            break;
        }
        let crafted = match craft_all(providers, attack, &selected) {
            Ok(crafted) => crafted,
            Err(reason) => {
                stop = Some(reason);
                break;
            }
        };
        let good_poisons: Vec<PoisonedText> = crafted
            .values()
            .filter_map(|r| r.as_ref().ok().cloned())
            .collect();
        let poisoned = inject_poisons(store, &good_poisons)?;

        for stack in &spec.defense_stacks {
            let expanded = stack.contains(&DefenseKind::KnowledgeExpansion);
            let cell_store = if expanded {
                let source = providers.expansion.as_ref().expect("validated expansion");
                match expand_knowledge(&poisoned, &expansion_queries, source, spec.expansion.k) {
                    Ok(store) => store,
                    Err(Error::BudgetExhausted(reason)) => {
                        stop = Some(reason);
                        report.cells.push(CellReport {
                            attack: attack.clone(),
                            defenses: stack.clone(),
                            retrieval_depth: spec.expansion.expanded_n,
                            metrics: None,
                            trials: Vec::new(),
                        });
                        break 'grid;
                    }
                    Err(other) => return Err(other),
                }
            } else {
                poisoned.clone()
            };
            let depth = if expanded { spec.expansion.expanded_n } else { spec.n };
            let system_prompt = if stack.contains(&DefenseKind::InstructionalPrevention) {
                hardened_prompt.as_deref().expect("precomputed hardened prompt")
            } else {
                spec.system_prompt.as_str()
            };

            let mut outcomes = Vec::new();
            for query in &selected {
                match crafted.get(&query.id).expect("crafted entry per query") {
                    Ok(poison) => {
                        let plan = TrialPlan {
                            store: &cell_store,
                            depth,
                            paraphrase: stack.contains(&DefenseKind::Paraphrasing),
                            detect: stack.contains(&DefenseKind::Detection),
                            system_prompt,
                            target: &query.targeted_answer,
                            verified_poison: poison.verified,
                        };
                        match run_trial(providers, &spec, &plan, query) {
                            Ok(row) => outcomes.push(row),
                            Err(reason) => {
                                stop = Some(reason);
                                break;
                            }
                        }
                    }
                    Err(message) => {
                        outcomes.push(TrialOutcome::errored(
                            query.id.clone(),
                            format!("poison crafting failed: {message}"),
                        ));
                    }
                }
            }
            let metrics = if outcomes.is_empty() {
                None
            } else {
                Some(compute_metrics(&outcomes, depth)?)
            };
            report.cells.push(CellReport {
                attack: attack.clone(),
                defenses: stack.clone(),
                retrieval_depth: depth,
                metrics,
                trials: outcomes,
            });
            if stop.is_some() {
                break 'grid;
            }
        }
    }

    report.partial = stop.is_some();
    report.stop_reason = stop;
    report.cost = providers.ledger.snapshot();
    Ok(report)
}
