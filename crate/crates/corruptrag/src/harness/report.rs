//! Report serialization.
//!
//! Two formats: the full report as pretty JSON (lossless, re-loadable), and
//! a flat CSV of one row per clean baseline and grid cell for spreadsheet
//! work. Both are byte-stable for a given report, so runs can be diffed.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::runner::ExperimentReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnknownFormat {
                token: other.to_string(),
                supported: "json, csv".to_string(),
            }),
        }
    }
}

impl std::fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        write!(f, "{name}")
    }
}

const CSV_HEADER: [&str; 16] = [
    "kind",
    "attack",
    "outer_order",
    "inner_order",
    "keyword_ablation",
    "defenses",
    "retrieval_depth",
    "trials",
    "errors",
    "accuracy",
    "asr",
    "recall",
    "precision",
    "f1",
    "tpr",
    "unverified_poisons",
];

fn float(value: f64) -> String {
    format!("{value}")
}

fn opt_float(value: Option<f64>) -> String {
    value.map(float).unwrap_or_default()
}

pub fn emit_report<W: Write>(
    report: &ExperimentReport,
    format: ReportFormat,
    mut writer: W,
) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut writer, report)?;
            writeln!(writer)?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut csv = csv::Writer::from_writer(writer);
            csv.write_record(CSV_HEADER)?;
            if let Some(baseline) = &report.clean_baseline {
                csv.write_record([
                    "clean".to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    report.n.to_string(),
                    baseline.trials.to_string(),
                    baseline.errors.to_string(),
                    float(baseline.accuracy),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
            for cell in &report.cells {
                let defenses = cell
                    .defenses
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                let (trials, errors, asr, recall, precision, f1, tpr, unverified) =
                    match &cell.metrics {
                        Some(m) => (
                            m.trials.to_string(),
                            m.errors.to_string(),
                            float(m.asr),
                            float(m.recall),
                            float(m.precision),
                            opt_float(m.f1),
                            opt_float(m.tpr),
                            m.unverified_poisons.to_string(),
                        ),
                        None => (
                            cell.trials.len().to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                        ),
                    };
                csv.write_record([
                    "attack".to_string(),
                    cell.attack.variant.to_string(),
                    cell.attack.order.outer.to_string(),
                    cell.attack.order.inner.to_string(),
                    cell.attack.keyword_ablation.clone().unwrap_or_default(),
                    defenses,
                    cell.retrieval_depth.to_string(),
                    trials,
                    errors,
                    String::new(),
                    asr,
                    recall,
                    precision,
                    f1,
                    tpr,
                    unverified,
                ])?;
            }
            csv.flush()?;
            Ok(())
        }
    }
}
