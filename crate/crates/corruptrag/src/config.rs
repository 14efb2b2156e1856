//! Run configuration.
//!
//! One TOML file describes a whole run: where the corpus and queries live,
//! how retrieval and generation are wired, which attacks and defense stacks
//! to evaluate, and the spend budget. Relative paths are resolved against
//! the config file's directory, so a config travels with its fixtures.
//!
//! Provider selection is two-mode. `offline` wiring uses the hash embedder
//! and the scripted doubles (deterministic, free); `remote` wiring talks to
//! OpenAI-compatible endpoints. Chat side roles (refinement, paraphrasing,
//! detection, crafting, expansion, LLM judging) follow the generator's mode.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind, AssemblyOrder, InnerOrder, OuterOrder};
use crate::corpus::TargetedQuery;
use crate::defenses::{BenignSource, DefenseKind, ExpansionConfig, ExpansionFixture};
use crate::embedder::remote::{RemoteEmbedder, DEFAULT_MAX_BATCH};
use crate::embedder::{
    cache::{CachedEmbedder, EmbeddingCache},
    Embedder, L2Normalized, Metered, OfflineEmbedder, SimilarityMetric, DEFAULT_OFFLINE_DIM,
};
use crate::error::{Error, Result};
use crate::generator::remote::RemoteChat;
use crate::generator::{
    ChatParams, ChatProvider, CostLedger, Prices, RagGenerator, Rendered, SpendBudget,
    DEFAULT_RAG_PROMPT,
};
use crate::harness::judge::AnswerJudge;
use crate::harness::runner::{ExperimentSpec, Providers};
use crate::remote::RemoteProviderConfig;
use crate::scripted::{
    ScriptedCrafter, ScriptedDetector, ScriptedExpander, ScriptedGenerator, ScriptedParaphraser,
    ScriptedRefiner,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub clean_baseline: bool,
    pub corpus: CorpusSection,
    pub queries: QueriesSection,
    #[serde(default)]
    pub retriever: RetrieverSection,
    #[serde(default)]
    pub embedder: EmbedderSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub scripted: ScriptedSection,
    #[serde(default)]
    pub attacks: Vec<AttackSection>,
    #[serde(default)]
    pub defenses: DefensesSection,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueriesSection {
    pub path: PathBuf,
    /// Evaluate only this many queries, sampled by the run seed.
    #[serde(default)]
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSection {
    #[serde(default = "default_n")]
    pub n: usize,
    /// "dot" or "cosine".
    #[serde(default = "default_metric")]
    pub metric: String,
}

fn default_n() -> usize {
    5
}

fn default_metric() -> String {
    "dot".to_string()
}

impl Default for RetrieverSection {
    fn default() -> Self {
        RetrieverSection {
            n: default_n(),
            metric: default_metric(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSection {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// L2-normalize vectors before scoring. Off by default: the attack's
    /// retrievability argument relies on raw token counts.
    #[serde(default)]
    pub normalize: bool,
    /// Append-only embedding cache, reused across runs.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default)]
    pub remote: Option<RemoteProviderConfig>,
}

fn default_dim() -> usize {
    DEFAULT_OFFLINE_DIM
}

fn default_max_batch() -> usize {
    DEFAULT_MAX_BATCH
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            kind: EmbedderKind::Offline,
            dim: default_dim(),
            normalize: false,
            cache_path: None,
            max_batch: default_max_batch(),
            remote: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default)]
    pub kind: GeneratorKind,
    #[serde(default)]
    pub remote: Option<RemoteProviderConfig>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Override of the generation prompt; must keep both slots.
    #[serde(default)]
    pub system_prompt: Option<String>,
}

fn default_max_tokens() -> u32 {
    256
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            kind: GeneratorKind::Scripted,
            remote: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            system_prompt: None,
        }
    }
}

/// Knobs for the scripted doubles; ignored in remote mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedSection {
    /// Refinement attempt on which the scripted refiner produces a
    /// verifiable rewrite; 0 never verifies.
    #[serde(default = "default_verify_attempt")]
    pub refine_verify_on_attempt: u32,
    /// Whether the scripted corpus crafter names the targeted answer.
    #[serde(default = "default_true")]
    pub crafter_supportive: bool,
}

fn default_verify_attempt() -> u32 {
    1
}

impl Default for ScriptedSection {
    fn default() -> Self {
        ScriptedSection {
            refine_verify_on_attempt: default_verify_attempt(),
            crafter_supportive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_variant")]
    pub variant: AttackKind,
    #[serde(default)]
    pub outer_order: OuterOrder,
    #[serde(default)]
    pub inner_order: InnerOrder,
    #[serde(default = "default_word_limit")]
    pub word_limit: u32,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub keyword_ablation: Option<String>,
}

fn default_variant() -> AttackKind {
    AttackKind::As
}

fn default_word_limit() -> u32 {
    30
}

fn default_max_attempts() -> u32 {
    5
}

impl AttackSection {
    pub fn to_attack_config(&self) -> AttackConfig {
        AttackConfig {
            variant: self.variant,
            order: AssemblyOrder {
                outer: self.outer_order,
                inner: self.inner_order,
            },
            word_limit: self.word_limit,
            max_attempts: self.max_attempts,
            keyword_ablation: self.keyword_ablation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefensesSection {
    /// Defense stacks to evaluate; the empty stack is the undefended run.
    #[serde(default = "default_stacks")]
    pub stacks: Vec<Vec<DefenseKind>>,
    #[serde(default = "default_expansion_k")]
    pub expansion_k: usize,
    #[serde(default = "default_expanded_n")]
    pub expanded_n: usize,
    /// Pre-written correct texts for the expansion defense; without it the
    /// expansion texts are written by the chat provider.
    #[serde(default)]
    pub expansion_fixture: Option<PathBuf>,
}

fn default_stacks() -> Vec<Vec<DefenseKind>> {
    vec![Vec::new()]
}

fn default_expansion_k() -> usize {
    ExpansionConfig::default().k
}

fn default_expanded_n() -> usize {
    ExpansionConfig::default().expanded_n
}

impl Default for DefensesSection {
    fn default() -> Self {
        DefensesSection {
            stacks: default_stacks(),
            expansion_k: default_expansion_k(),
            expanded_n: default_expanded_n(),
            expansion_fixture: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    #[default]
    Substring,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    #[serde(default)]
    pub kind: JudgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default)]
    pub max_provider_calls: Option<u64>,
    #[serde(default)]
    pub max_spend: Option<f64>,
    #[serde(default)]
    pub input_price_per_million: Option<f64>,
    #[serde(default)]
    pub output_price_per_million: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_formats() -> Vec<String> {
    vec!["json".to_string()]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("reports")
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            formats: default_formats(),
            out_dir: default_out_dir(),
        }
    }
}

fn rebase(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Loads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load_from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        rebase(base, &mut config.corpus.path);
        rebase(base, &mut config.queries.path);
        if let Some(cache) = &mut config.embedder.cache_path {
            rebase(base, cache);
        }
        if let Some(fixture) = &mut config.defenses.expansion_fixture {
            rebase(base, fixture);
        }
        rebase(base, &mut config.report.out_dir);
        Ok(config)
    }

    /// Forces offline wiring: hash embedder, scripted chat doubles.
    pub fn force_offline(&mut self) {
        self.embedder.kind = EmbedderKind::Offline;
        self.generator.kind = GeneratorKind::Scripted;
    }

    pub fn metric(&self) -> Result<SimilarityMetric> {
        SimilarityMetric::from_str(&self.retriever.metric)
    }

    pub fn chat_params(&self) -> ChatParams {
        ChatParams {
            temperature: self.generator.temperature,
            max_tokens: self.generator.max_tokens,
        }
    }

    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            attacks: self.attacks.iter().map(AttackSection::to_attack_config).collect(),
            defense_stacks: self.defenses.stacks.clone(),
            n: self.retriever.n,
            metric: self.metric()?,
            expansion: ExpansionConfig {
                k: self.defenses.expansion_k,
                expanded_n: self.defenses.expanded_n,
            },
            system_prompt: self
                .generator
                .system_prompt
                .clone()
                .unwrap_or_else(|| DEFAULT_RAG_PROMPT.to_string()),
            params: self.chat_params(),
            seed: self.seed,
            sample_queries: self.queries.sample,
            clean_baseline: self.clean_baseline,
        })
    }

    pub fn ledger(&self) -> CostLedger {
        let defaults = Prices::default();
        CostLedger::new(
            Prices {
                input_per_million: self
                    .budget
                    .input_price_per_million
                    .unwrap_or(defaults.input_per_million),
                output_per_million: self
                    .budget
                    .output_price_per_million
                    .unwrap_or(defaults.output_per_million),
            },
            SpendBudget {
                max_provider_calls: self.budget.max_provider_calls,
                max_spend: self.budget.max_spend,
            },
        )
    }

    fn wire_embedder(&self, ledger: &Arc<CostLedger>) -> Result<Box<dyn Embedder>> {
        match self.embedder.kind {
            EmbedderKind::Offline => {
                let base = OfflineEmbedder::new(self.embedder.dim)?;
                if self.embedder.normalize {
                    Ok(Box::new(L2Normalized::new(base)))
                } else {
                    Ok(Box::new(base))
                }
            }
            EmbedderKind::Remote => {
                let remote = self.embedder.remote.as_ref().ok_or_else(|| {
                    Error::Config("embedder.kind = \"remote\" needs [embedder.remote]".to_string())
                })?;
                let base = RemoteEmbedder::new(remote, self.embedder.dim, self.embedder.max_batch)?;
                let cache = match &self.embedder.cache_path {
                    Some(path) => EmbeddingCache::open(path)?,
                    None => EmbeddingCache::in_memory(),
                };
                let cached = CachedEmbedder::new(base, cache);
                let metered = Metered::new(cached, Arc::clone(ledger));
                if self.embedder.normalize {
                    Ok(Box::new(L2Normalized::new(metered)))
                } else {
                    Ok(Box::new(metered))
                }
            }
        }
    }

    fn remote_chat(&self) -> Result<Box<dyn ChatProvider>> {
        let remote = self.generator.remote.as_ref().ok_or_else(|| {
            Error::Config("generator.kind = \"remote\" needs [generator.remote]".to_string())
        })?;
        Ok(Box::new(RemoteChat::new(remote)?))
    }

    /// Builds every provider the run needs. `queries` feed the scripted
    /// generator's answer key; remote wiring ignores them.
    pub fn wire(&self, queries: &[TargetedQuery]) -> Result<Wired> {
        let ledger = Arc::new(self.ledger());
        let embedder = self.wire_embedder(&ledger)?;
        let uses = |kind: DefenseKind| self.defenses.stacks.iter().any(|s| s.contains(&kind));
        let has_attack = |variant: AttackKind| self.attacks.iter().any(|a| a.variant == variant);

        let generator: Box<dyn RagGenerator>;
        let mut refiner: Option<Box<dyn ChatProvider>> = None;
        let mut paraphraser: Option<Box<dyn ChatProvider>> = None;
        let mut detector: Option<Box<dyn ChatProvider>> = None;
        let mut crafter: Option<Box<dyn ChatProvider>> = None;
        let mut expander: Option<Box<dyn ChatProvider>> = None;
        let mut judge_llm: Option<Box<dyn ChatProvider>> = None;

        match self.generator.kind {
            GeneratorKind::Scripted => {
                generator = Box::new(ScriptedGenerator::new(queries));
                if has_attack(AttackKind::Ak) {
                    refiner = Some(Box::new(ScriptedRefiner::verifying_on_attempt(
                        self.scripted.refine_verify_on_attempt,
                    )));
                }
                if has_attack(AttackKind::PragBb) {
                    crafter = Some(Box::new(if self.scripted.crafter_supportive {
                        ScriptedCrafter::supportive()
                    } else {
                        ScriptedCrafter::evasive()
                    }));
                }
                if uses(DefenseKind::Paraphrasing) {
                    paraphraser = Some(Box::new(ScriptedParaphraser::new(self.seed)));
                }
                if uses(DefenseKind::Detection) {
                    detector = Some(Box::new(ScriptedDetector));
                }
                if uses(DefenseKind::KnowledgeExpansion) && self.defenses.expansion_fixture.is_none()
                {
                    expander = Some(Box::new(ScriptedExpander));
                }
                if self.judge.kind == JudgeKind::Llm {
                    return Err(Error::Config(
                        "judge.kind = \"llm\" needs a remote generator".to_string(),
                    ));
                }
            }
            GeneratorKind::Remote => {
                generator = Box::new(Rendered(self.remote_chat()?));
                if has_attack(AttackKind::Ak) {
                    refiner = Some(self.remote_chat()?);
                }
                if has_attack(AttackKind::PragBb) {
                    crafter = Some(self.remote_chat()?);
                }
                if uses(DefenseKind::Paraphrasing) {
                    paraphraser = Some(self.remote_chat()?);
                }
                if uses(DefenseKind::Detection) {
                    detector = Some(self.remote_chat()?);
                }
                if uses(DefenseKind::KnowledgeExpansion) && self.defenses.expansion_fixture.is_none()
                {
                    expander = Some(self.remote_chat()?);
                }
                if self.judge.kind == JudgeKind::Llm {
                    judge_llm = Some(self.remote_chat()?);
                }
            }
        }

        let expansion_fixture = match &self.defenses.expansion_fixture {
            Some(path) => Some(ExpansionFixture::load_from_path(path)?),
            None => None,
        };

        Ok(Wired {
            ledger,
            embedder,
            generator,
            refiner,
            paraphraser,
            detector,
            crafter,
            expander,
            expansion_fixture,
            judge_llm,
            params: self.chat_params(),
        })
    }
}

/// Owns the wired providers; [`Wired::providers`] lends them to the runner.
pub struct Wired {
    pub ledger: Arc<CostLedger>,
    embedder: Box<dyn Embedder>,
    generator: Box<dyn RagGenerator>,
    refiner: Option<Box<dyn ChatProvider>>,
    paraphraser: Option<Box<dyn ChatProvider>>,
    detector: Option<Box<dyn ChatProvider>>,
    crafter: Option<Box<dyn ChatProvider>>,
    expander: Option<Box<dyn ChatProvider>>,
    expansion_fixture: Option<ExpansionFixture>,
    judge_llm: Option<Box<dyn ChatProvider>>,
    params: ChatParams,
}

impl Wired {
    pub fn providers(&self) -> Providers<'_> {
        let expansion = match (&self.expansion_fixture, &self.expander) {
            (Some(fixture), _) => Some(BenignSource::Fixture(fixture.clone())),
            (None, Some(provider)) => Some(BenignSource::Provider {
                provider: &**provider,
                params: self.params,
                ledger: &self.ledger,
            }),
            (None, None) => None,
        };
        Providers {
            embedder: &*self.embedder,
            generator: &*self.generator,
            refiner: self.refiner.as_deref(),
            paraphraser: self.paraphraser.as_deref(),
            detector: self.detector.as_deref(),
            crafter: self.crafter.as_deref(),
            expansion,
            judge: match &self.judge_llm {
                Some(provider) => AnswerJudge::Llm {
                    provider: &**provider,
                    ledger: &self.ledger,
                },
                None => AnswerJudge::NormalizedSubstring,
            },
            ledger: &self.ledger,
        }
    }

    pub fn embedder(&self) -> &dyn Embedder {
        &*self.embedder
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = r#"
[corpus]
path = "corpus.jsonl"

[queries]
path = "queries.jsonl"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.seed, 0);
        assert!(config.clean_baseline);
        assert_eq!(config.retriever.n, 5);
        assert_eq!(config.metric().unwrap(), SimilarityMetric::DotProduct);
        assert_eq!(config.embedder.kind, EmbedderKind::Offline);
        assert_eq!(config.embedder.dim, 256);
        assert!(!config.embedder.normalize);
        assert_eq!(config.generator.kind, GeneratorKind::Scripted);
        assert_eq!(config.judge.kind, JudgeKind::Substring);
        assert_eq!(config.defenses.stacks, vec![Vec::<DefenseKind>::new()]);
        assert_eq!(config.defenses.expansion_k, 5);
        assert_eq!(config.defenses.expanded_n, 10);
        assert!(config.attacks.is_empty());
        let params = config.chat_params();
        assert_eq!(params.temperature, 0.0);
        assert_eq!(params.max_tokens, 256);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nnot_a_key = 1\n");
        assert!(matches!(
            RunConfig::from_toml_str(&bad),
            Err(Error::Config(_))
        ));
        let bad = MINIMAL.replace("[queries]", "[queries]\ntypo_field = true");
        assert!(matches!(
            RunConfig::from_toml_str(&bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_config_parses_every_knob() {
        let text = r#"
seed = 42
clean_baseline = false

[corpus]
path = "/data/corpus.jsonl"

[queries]
path = "/data/queries.jsonl"
sample = 16

[retriever]
n = 7
metric = "cosine"

[embedder]
kind = "offline"
dim = 64
normalize = true

[generator]
kind = "scripted"
temperature = 0.5
max_tokens = 64

[scripted]
refine_verify_on_attempt = 3
crafter_supportive = false

[[attacks]]
variant = "ak"
outer_order = "hs"
inner_order = "state_adv"
word_limit = 25
max_attempts = 4
keyword_ablation = "latest"

[[attacks]]
variant = "pia"

[defenses]
stacks = [[], ["detection", "instructional_prevention"]]
expansion_k = 3
expanded_n = 8

[judge]
kind = "substring"

[budget]
max_provider_calls = 100
max_spend = 0.5

[report]
formats = ["json", "csv"]
out_dir = "/tmp/reports"
"#;
        let config = RunConfig::from_toml_str(text).unwrap();
        let spec = config.to_spec().unwrap();
        assert_eq!(spec.seed, 42);
        assert!(!spec.clean_baseline);
        assert_eq!(spec.n, 7);
        assert_eq!(spec.metric, SimilarityMetric::Cosine);
        assert_eq!(spec.sample_queries, Some(16));
        assert_eq!(spec.attacks.len(), 2);
        assert_eq!(spec.attacks[0].variant, AttackKind::Ak);
        assert_eq!(spec.attacks[0].order.outer, OuterOrder::Hs);
        assert_eq!(spec.attacks[0].order.inner, InnerOrder::StateAdv);
        assert_eq!(spec.attacks[0].word_limit, 25);
        assert_eq!(spec.attacks[0].max_attempts, 4);
        assert_eq!(spec.attacks[0].keyword_ablation.as_deref(), Some("latest"));
        assert_eq!(spec.attacks[1].variant, AttackKind::Pia);
        assert_eq!(
            spec.defense_stacks,
            vec![
                vec![],
                vec![DefenseKind::Detection, DefenseKind::InstructionalPrevention]
            ]
        );
        assert_eq!(spec.expansion.k, 3);
        assert_eq!(spec.expansion.expanded_n, 8);
        assert_eq!(spec.params.temperature, 0.5);
        assert_eq!(spec.params.max_tokens, 64);
        assert_eq!(config.scripted.refine_verify_on_attempt, 3);
        assert!(!config.scripted.crafter_supportive);

        let ledger = config.ledger();
        for _ in 0..100 {
            ledger.begin_call().unwrap();
        }
        assert!(matches!(
            ledger.begin_call(),
            Err(Error::BudgetExhausted(_))
        ));
    }

    #[test]
    fn relative_paths_rebase_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        let mut file = std::fs::File::create(&config_path).unwrap();
        write!(
            file,
            r#"
[corpus]
path = "corpus.jsonl"

[queries]
path = "sub/queries.jsonl"

[embedder]
cache_path = "cache.jsonl"

[defenses]
expansion_fixture = "expansion.jsonl"

[report]
out_dir = "out"
"#
        )
        .unwrap();
        drop(file);
        let config = RunConfig::load_from_path(&config_path).unwrap();
        assert_eq!(config.corpus.path, dir.path().join("corpus.jsonl"));
        assert_eq!(config.queries.path, dir.path().join("sub/queries.jsonl"));
        assert_eq!(
            config.embedder.cache_path.as_deref(),
            Some(dir.path().join("cache.jsonl").as_path())
        );
        assert_eq!(
            config.defenses.expansion_fixture.as_deref(),
            Some(dir.path().join("expansion.jsonl").as_path())
        );
        assert_eq!(config.report.out_dir, dir.path().join("out"));
    }

    #[test]
    fn absolute_paths_are_left_alone() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            "[corpus]\npath = \"/abs/corpus.jsonl\"\n\n[queries]\npath = \"/abs/queries.jsonl\"\n",
        )
        .unwrap();
        let config = RunConfig::load_from_path(&config_path).unwrap();
        assert_eq!(config.corpus.path, PathBuf::from("/abs/corpus.jsonl"));
    }

    fn toy_queries() -> Vec<TargetedQuery> {
        vec![TargetedQuery::new("q1", "What is the capital of France?", "Paris", "Lyon").unwrap()]
    }

    #[test]
    fn offline_wiring_produces_usable_providers() {
        let text = format!(
            "{MINIMAL}\n[[attacks]]\nvariant = \"ak\"\n\n[[attacks]]\nvariant = \"prag_bb\"\n"
        );
        let mut config = RunConfig::from_toml_str(&text).unwrap();
        config.defenses.stacks = vec![
            vec![DefenseKind::Paraphrasing, DefenseKind::Detection],
            vec![DefenseKind::KnowledgeExpansion],
        ];
        let queries = toy_queries();
        let wired = config.wire(&queries).unwrap();
        let providers = wired.providers();
        assert_eq!(providers.embedder.provider_id(), "offline");
        assert_eq!(providers.generator.generator_id(), "scripted-generator");
        assert!(providers.refiner.is_some());
        assert!(providers.crafter.is_some());
        assert!(providers.paraphraser.is_some());
        assert!(providers.detector.is_some());
        assert!(matches!(
            providers.expansion,
            Some(BenignSource::Provider { .. })
        ));
        assert_eq!(providers.judge.label(), "substring");
    }

    #[test]
    fn roles_not_used_by_the_spec_are_not_wired() {
        let text = format!("{MINIMAL}\n[[attacks]]\nvariant = \"as\"\n");
        let config = RunConfig::from_toml_str(&text).unwrap();
        let queries = toy_queries();
        let wired = config.wire(&queries).unwrap();
        let providers = wired.providers();
        assert!(providers.refiner.is_none());
        assert!(providers.crafter.is_none());
        assert!(providers.paraphraser.is_none());
        assert!(providers.detector.is_none());
        assert!(providers.expansion.is_none());
    }

    #[test]
    fn llm_judge_without_remote_generator_is_a_config_error() {
        let text = format!("{MINIMAL}\n[judge]\nkind = \"llm\"\n");
        let config = RunConfig::from_toml_str(&text).unwrap();
        let err = config.wire(&toy_queries()).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn remote_kinds_without_remote_sections_are_config_errors() {
        let text = MINIMAL.replace(
            "[queries]",
            "[embedder]\nkind = \"remote\"\n\n[queries]",
        );
        let config = RunConfig::from_toml_str(&text).unwrap();
        assert!(matches!(
            config.wire(&toy_queries()),
            Err(Error::Config(_))
        ));

        let text = MINIMAL.replace(
            "[queries]",
            "[generator]\nkind = \"remote\"\n\n[queries]",
        );
        let config = RunConfig::from_toml_str(&text).unwrap();
        assert!(matches!(
            config.wire(&toy_queries()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn remote_wiring_requires_the_api_key_env() {
        let text = format!(
            "{MINIMAL}\n[generator]\nkind = \"remote\"\n\n[generator.remote]\nendpoint = \"http://localhost:9/v1/chat/completions\"\nmodel = \"test-model\"\napi_key_env = \"CORRUPTRAG_TEST_KEY_THAT_IS_UNSET\"\n"
        );
        let config = RunConfig::from_toml_str(&text).unwrap();
        let err = config.wire(&toy_queries()).err().unwrap();
        assert!(matches!(err, Error::MissingApiKey { env } if env == "CORRUPTRAG_TEST_KEY_THAT_IS_UNSET"));
    }

    #[test]
    fn force_offline_overrides_remote_kinds() {
        let text = MINIMAL.replace(
            "[queries]",
            "[embedder]\nkind = \"remote\"\n\n[generator]\nkind = \"remote\"\n\n[queries]",
        );
        let mut config = RunConfig::from_toml_str(&text).unwrap();
        config.force_offline();
        let wired = config.wire(&toy_queries()).unwrap();
        assert_eq!(wired.providers().embedder.provider_id(), "offline");
        assert_eq!(
            wired.providers().generator.generator_id(),
            "scripted-generator"
        );
    }
}
