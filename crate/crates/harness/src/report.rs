//! Merges run ledgers into a JSON summary and plot-ready CSV files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::stages::{write_file, write_json};
use crate::train::{Ledger, SplitMetrics};

/// One `label=path` input.
#[derive(Clone, Debug, PartialEq)]
pub struct LedgerInput {
    pub label: String,
    pub path: PathBuf,
}

impl LedgerInput {
    /// Parses `label=path`; a bare path is labelled by its position.
    pub fn parse(arg: &str, position: usize) -> Result<Self> {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) => (l.to_string(), p),
            None => (format!("run{position}"), arg),
        };
        if label.is_empty() || label.contains(',') || path.is_empty() {
            return Err(HarnessError::Config(format!(
                "bad ledger argument {arg:?}; expected label=path"
            )));
        }
        Ok(Self {
            label,
            path: PathBuf::from(path),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub method: String,
    pub config_hash: String,
    pub epochs: usize,
    pub first_val: Option<SplitMetrics>,
    pub final_val: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunSummary>,
}

pub const CURVES_FILE: &str = "curves.csv";
pub const TAILS_FILE: &str = "tails.csv";
pub const REPORT_FILE: &str = "report.json";

fn curve_rows(label: &str, ledger: &Ledger) -> Vec<[String; 4]> {
    let mut out = Vec::new();
    for (epoch, t, v) in &ledger.epochs {
        let metrics = [
            ("train_total", t.total),
            ("train_cd_sparse", t.cd_sparse),
            ("train_cd_dense", t.cd_dense),
            ("train_proj_sparse", t.proj_sparse),
            ("train_proj_dense", t.proj_dense),
            ("train_mean_weight", t.weight),
            ("val_cd_dense", v.cd_dense),
            ("val_f_score", v.f_score),
            ("val_cd_standard", v.cd_standard),
            ("val_cd_nonstandard", v.cd_nonstandard),
        ];
        for (name, value) in metrics {
            out.push([
                label.to_string(),
                epoch.to_string(),
                name.to_string(),
                value.to_string(),
            ]);
        }
    }
    out
}

fn to_csv<const N: usize>(header: [&str; N], rows: &[[String; N]]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::io("<csv>", e);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<csv>", e))
}

/// Reads every ledger (a missing one is an I/O error) and writes
/// `report.json`, `curves.csv` (long format: run, epoch, metric, value)
/// and `tails.csv` (one standard and one nonstandard series per run).
pub fn write_report(inputs: &[LedgerInput], out: &Path) -> Result<Report> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("report needs at least one ledger".into()));
    }
    let mut labels: Vec<&str> = inputs.iter().map(|i| i.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != inputs.len() {
        return Err(HarnessError::Config("ledger labels must be distinct".into()));
    }
    let ledgers = inputs
        .iter()
        .map(|i| Ledger::read(&i.path))
        .collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    let mut tails = Vec::new();
    let mut runs = Vec::new();
    for (input, ledger) in inputs.iter().zip(&ledgers) {
        curves.extend(curve_rows(&input.label, ledger));
        for (tag, pick) in [
            (
                "standard",
                (|m: &SplitMetrics| m.cd_standard) as fn(&SplitMetrics) -> f64,
            ),
            ("nonstandard", |m: &SplitMetrics| m.cd_nonstandard),
        ] {
            for (epoch, _, v) in &ledger.epochs {
                tails.push([format!("{}_{tag}", input.label), epoch.to_string(), pick(v).to_string()]);
            }
        }
        runs.push(RunSummary {
            label: input.label.clone(),
            method: ledger.method.clone(),
            config_hash: ledger.config_hash.clone(),
            epochs: ledger.epochs.len(),
            first_val: ledger.epochs.first().map(|e| e.2),
            final_val: ledger.epochs.last().map(|e| e.2),
            test: ledger.test,
        });
    }
    write_file(
        &out.join(CURVES_FILE),
        &to_csv(["run", "epoch", "metric", "value"], &curves)?,
    )?;
    write_file(&out.join(TAILS_FILE), &to_csv(["series", "epoch", "cd"], &tails)?)?;
    let report = Report { runs };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_arguments() {
        let a = LedgerInput::parse("ours=runs/h/ledger.jsonl", 0).unwrap();
        assert_eq!(a.label, "ours");
        assert_eq!(a.path, PathBuf::from("runs/h/ledger.jsonl"));
        assert_eq!(LedgerInput::parse("x.jsonl", 2).unwrap().label, "run2");
        assert!(LedgerInput::parse("=x", 0).is_err());
        assert!(LedgerInput::parse("a,b=x", 0).is_err());
    }
}
