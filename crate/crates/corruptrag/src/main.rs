//! Command-line interface.
//!
//! Subcommands mirror the pipeline stages so each artifact can be inspected
//! between steps:
//!
//! ```text
//! ingest   corpus JSONL -> store snapshot
//! craft    run config   -> poisoned texts JSONL
//! inject   store + poisons -> poisoned store snapshot
//! run      run config   -> experiment reports (JSON/CSV)
//! audit    store + queries -> poison ranks and correct-text counts
//! report   saved JSON report -> another format
//! ```
//!
//! Exit codes: 0 success, 1 config or input error, 2 provider or budget
//! failure, 3 run stopped early with a partial report written.

use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use corruptrag::attacks::{inject_poisons, load_poisons_from_path, save_poisons_to_path};
use corruptrag::config::RunConfig;
use corruptrag::corpus::{ingest_corpus_from_path, load_queries_from_path, StoreSnapshot};
use corruptrag::embedder::{OfflineEmbedder, SimilarityMetric, DEFAULT_OFFLINE_DIM};
use corruptrag::harness::report::{emit_report, ReportFormat};
use corruptrag::harness::runner::{craft_poison, run_experiment, ExperimentReport};
use corruptrag::retriever::{relevance_audit, retrieve_top_n, AuditJudge};
use corruptrag::{Error, Result};

#[derive(Parser)]
#[command(
    name = "corruptrag",
    version,
    about = "Single-text knowledge poisoning attacks and defenses for RAG pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store snapshot from a corpus JSONL file.
    Ingest {
        /// Corpus JSONL, one {"id", "text"} record per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Store snapshot output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Craft one poisoned text per query under one attack config.
    Craft {
        /// Run config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Index into the config's attack list.
        #[arg(long, default_value_t = 0)]
        attack: usize,
        /// Poisons JSONL output path.
        #[arg(long)]
        out: PathBuf,
        /// Force the offline embedder and scripted providers.
        #[arg(long)]
        offline: bool,
    },
    /// Inject crafted poisons into a store snapshot.
    Inject {
        /// Store snapshot to poison.
        #[arg(long)]
        store: PathBuf,
        /// Poisons JSONL from `craft`.
        #[arg(long)]
        poisons: PathBuf,
        /// Poisoned store snapshot output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the attack and defense grid from a config file and write reports.
    Run {
        /// Run config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Force the offline embedder and scripted providers.
        #[arg(long)]
        offline: bool,
    },
    /// Rank injected poisons and count correct texts among retrieved ones.
    Audit {
        /// Store snapshot, typically poisoned.
        #[arg(long)]
        store: PathBuf,
        /// Targeted queries JSONL.
        #[arg(long)]
        queries: PathBuf,
        /// Retrieval depth.
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// Similarity metric: "dot" or "cosine".
        #[arg(long, default_value = "dot")]
        metric: String,
        /// Offline embedder dimension.
        #[arg(long, default_value_t = DEFAULT_OFFLINE_DIM)]
        dim: usize,
    },
    /// Re-emit a saved JSON report in another format.
    Report {
        /// JSON report written by `run`.
        #[arg(long)]
        input: PathBuf,
        /// Output format: "json" or "csv".
        #[arg(long, default_value = "csv")]
        format: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}

/// Provider-class failures exit 2; everything else is an input problem.
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Provider { .. }
        | Error::EmptyCompletion { .. }
        | Error::MissingApiKey { .. }
        | Error::BudgetExhausted(_) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest { corpus, out } => ingest(&corpus, &out),
        Command::Craft {
            config,
            attack,
            out,
            offline,
        } => craft(&config, attack, &out, offline),
        Command::Inject { store, poisons, out } => inject(&store, &poisons, &out),
        Command::Run { config, offline } => run(&config, offline),
        Command::Audit {
            store,
            queries,
            n,
            metric,
            dim,
        } => audit(&store, &queries, n, &metric, dim),
        Command::Report { input, format, out } => reemit(&input, &format, out.as_deref()),
    }
}

fn ingest(corpus: &std::path::Path, out: &std::path::Path) -> Result<ExitCode> {
    let store = ingest_corpus_from_path(corpus)?;
    store.persist_to_path(out)?;
    println!("ingested {} documents into {}", store.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn craft(
    config_path: &std::path::Path,
    attack_index: usize,
    out: &std::path::Path,
    offline: bool,
) -> Result<ExitCode> {
    let mut config = RunConfig::load_from_path(config_path)?;
    if offline {
        config.force_offline();
    }
    let section = config.attacks.get(attack_index).ok_or_else(|| {
        Error::Config(format!(
            "attack index {attack_index} out of range: config defines {} attack(s)",
            config.attacks.len()
        ))
    })?;
    let attack = section.to_attack_config();
    attack.validate()?;
    let queries = load_queries_from_path(&config.queries.path)?;
    let wired = config.wire(&queries)?;
    let providers = wired.providers();
    let poisons = queries
        .iter()
        .map(|query| craft_poison(&providers, &attack, query))
        .collect::<Result<Vec<_>>>()?;
    save_poisons_to_path(out, &poisons)?;
    println!(
        "crafted {} poisoned texts ({}) into {}",
        poisons.len(),
        attack.variant,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn inject(
    store_path: &std::path::Path,
    poisons_path: &std::path::Path,
    out: &std::path::Path,
) -> Result<ExitCode> {
    let store = StoreSnapshot::load_from_path(store_path)?;
    let poisons = load_poisons_from_path(poisons_path)?;
    let poisoned = inject_poisons(&store, &poisons)?;
    poisoned.persist_to_path(out)?;
    println!(
        "injected {} poisoned texts; store holds {} documents at {}",
        poisons.len(),
        poisoned.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(config_path: &std::path::Path, offline: bool) -> Result<ExitCode> {
    let mut config = RunConfig::load_from_path(config_path)?;
    if offline {
        config.force_offline();
    }
    let formats = config
        .report
        .formats
        .iter()
        .map(|name| ReportFormat::from_str(name))
        .collect::<Result<Vec<_>>>()?;
    let store = ingest_corpus_from_path(&config.corpus.path)?;
    let queries = load_queries_from_path(&config.queries.path)?;
    let spec = config.to_spec()?;
    let wired = config.wire(&queries)?;
    let report = run_experiment(&wired.providers(), &spec, &store, &queries)?;

    std::fs::create_dir_all(&config.report.out_dir)?;
    for format in formats {
        let path = config.report.out_dir.join(format!("report.{format}"));
        let file = std::fs::File::create(&path)?;
        emit_report(&report, format, BufWriter::new(file))?;
        println!("wrote {}", path.display());
    }
    print_summary(&report);

    if report.partial {
        eprintln!(
            "run stopped early: {}",
            report.stop_reason.as_deref().unwrap_or("unknown reason")
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn opt_metric(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{} queries, retrieval depth {}, metric {}, judge {}",
        report.query_ids.len(),
        report.n,
        report.metric,
        report.judge
    );
    if let Some(baseline) = &report.clean_baseline {
        println!(
            "clean baseline: accuracy {:.3} over {} trials ({} errors)",
            baseline.accuracy, baseline.trials, baseline.errors
        );
    }
    for cell in &report.cells {
        let defenses = if cell.defenses.is_empty() {
            "undefended".to_string()
        } else {
            cell.defenses
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("+")
        };
        match &cell.metrics {
            Some(m) => println!(
                "{} vs {defenses}: asr {:.3} recall {:.3} precision {:.3} f1 {} tpr {} ({} trials, {} errors)",
                cell.attack.variant,
                m.asr,
                m.recall,
                m.precision,
                opt_metric(m.f1),
                opt_metric(m.tpr),
                m.trials,
                m.errors
            ),
            None => println!("{} vs {defenses}: no completed trials", cell.attack.variant),
        }
    }
    println!(
        "provider calls {}, tokens {} in / {} out, estimated spend ${:.4}",
        report.cost.calls,
        report.cost.input_tokens,
        report.cost.output_tokens,
        report.cost.total_cost
    );
}

fn audit(
    store_path: &std::path::Path,
    queries_path: &std::path::Path,
    n: usize,
    metric: &str,
    dim: usize,
) -> Result<ExitCode> {
    let store = StoreSnapshot::load_from_path(store_path)?;
    let queries = load_queries_from_path(queries_path)?;
    let metric = SimilarityMetric::from_str(metric)?;
    let embedder = OfflineEmbedder::new(dim)?;
    let judge = AuditJudge::CorrectAnswerSubstring;
    println!(
        "auditing {} queries at depth {n} with the offline embedder ({metric}, {} judge)",
        queries.len(),
        judge.label()
    );
    for query in &queries {
        let result = retrieve_top_n(&embedder, &store, &query.id, &query.question, n, metric)?;
        let relevant = relevance_audit(query, &result, &store, &judge)?;
        let retrieved = result.ranked.len();
        let rank = match store.injected_for(&query.id) {
            None => "no poison injected".to_string(),
            Some(doc_id) => match result.rank_of(doc_id) {
                Some(rank) => format!("poison ranked {rank} of {retrieved}"),
                None => format!("poison not in top {retrieved}"),
            },
        };
        println!(
            "{}: {rank}; {relevant} of {retrieved} retrieved texts state the correct answer",
            query.id
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn reemit(
    input: &std::path::Path,
    format: &str,
    out: Option<&std::path::Path>,
) -> Result<ExitCode> {
    let format = ReportFormat::from_str(format)?;
    let text = std::fs::read_to_string(input)?;
    let report: ExperimentReport = serde_json::from_str(&text)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            emit_report(&report, format, BufWriter::new(file))?;
            println!("wrote {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            emit_report(&report, format, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
