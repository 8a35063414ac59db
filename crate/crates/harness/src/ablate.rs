//! The eight-variant ablation grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Sampling};
use crate::corpus::Corpus;
use crate::error::{HarnessError, Result};
use crate::stages::{ensure_priors_inputs, write_file, write_json};
use crate::train::{cached_priors, train_completion, SplitMetrics};

/// Toggles of one ablation variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub method: char,
    pub spf_levels: usize,
    pub use_prior: bool,
    pub sampling: Sampling,
    pub use_proj: bool,
    /// Published reference values (CD x 1e-3, F-score) for annotation.
    pub published_cd: f64,
    pub published_f: f64,
}

const fn v(
    method: char,
    spf_levels: usize,
    use_prior: bool,
    sampling: Sampling,
    use_proj: bool,
    published_cd: f64,
    published_f: f64,
) -> Variant {
    Variant {
        method,
        spf_levels,
        use_prior,
        sampling,
        use_proj,
        published_cd,
        published_f,
    }
}

pub const VARIANTS: [Variant; 8] = [
    v('A', 0, false, Sampling::None, false, 9.16, 0.635),
    v('B', 1, true, Sampling::None, false, 8.58, 0.652),
    v('C', 2, true, Sampling::None, false, 8.42, 0.660),
    v('D', 3, true, Sampling::None, false, 8.39, 0.662),
    v('E', 3, true, Sampling::Cos, false, 8.10, 0.692),
    v('F', 3, false, Sampling::Cos, true, 8.24, 0.682),
    v('G', 3, true, Sampling::L2, true, 8.12, 0.695),
    v('H', 3, true, Sampling::Cos, true, 8.05, 0.709),
];

pub fn variant(method: char) -> Result<Variant> {
    VARIANTS
        .iter()
        .copied()
        .find(|v| v.method == method.to_ascii_uppercase())
        .ok_or_else(|| HarnessError::Config(format!("unknown ablation method {method:?}; expected A-H")))
}

impl Variant {
    /// `base` with this variant's toggles applied. SPF levels are capped by
    /// the network depth, so shallow networks merge the deeper variants.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.network.spf_levels = self.spf_levels.min(cfg.network.levels);
        cfg.train.use_prior = self.use_prior;
        cfg.train.sampling = self.sampling;
        cfg.objective.use_proj = self.use_proj;
        cfg
    }

    pub fn sampling_name(&self) -> &'static str {
        match self.sampling {
            Sampling::None => "-",
            Sampling::Cos => "cos",
            Sampling::L2 => "l2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub test: SplitMetrics,
    pub final_val_cd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
    /// H's test CD is at most A's; absent unless both ran.
    pub h_beats_a: Option<bool>,
    /// A - H on the nonstandard tail is at least A - H on the standard
    /// tail; absent unless both ran.
    pub gain_on_nonstandard: Option<bool>,
}

impl AblationReport {
    fn row(&self, m: char) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.method == m)
    }

    fn directional(&mut self) {
        if let (Some(a), Some(h)) = (self.row('A'), self.row('H')) {
            let (a, h) = (a.test, h.test);
            self.h_beats_a = Some(h.cd_dense <= a.cd_dense);
            self.gain_on_nonstandard = Some(a.cd_nonstandard - h.cd_nonstandard >= a.cd_standard - h.cd_standard);
        }
    }
}

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

/// Trains each requested variant under `out/<method>` on shared pretext
/// artifacts, then writes the comparison table.
pub fn run_ablation(base: &ExperimentConfig, corpus: &Corpus, methods: &[char], out: &Path) -> Result<AblationReport> {
    let (ext, protos) = ensure_priors_inputs(base, corpus)?;
    let mut rows = Vec::new();
    for &m in methods {
        let var = variant(m)?;
        let cfg = var.apply(base);
        let dir = out.join(var.method.to_string());
        log::info!("ablation method {}", var.method);
        let cache = cached_priors(&cfg, corpus, &ext, &protos, &dir)?;
        let outcome = train_completion(&cfg, corpus, &cache, &dir, &var.method.to_string())?;
        let test = outcome.ledger.test.expect("training records test metrics");
        let final_val_cd = outcome.ledger.epochs.last().map_or(f64::NAN, |e| e.2.cd_dense);
        rows.push(AblationRow {
            // report the depth that actually ran
            variant: Variant {
                spf_levels: cfg.network.spf_levels,
                ..var
            },
            test,
            final_val_cd,
        });
    }
    let mut report = AblationReport {
        config_hash: base.train_hash(),
        rows,
        h_beats_a: None,
        gain_on_nonstandard: None,
    };
    report.directional();
    write_file(&out.join(ABLATION_CSV), &ablation_csv(&report)?)?;
    write_json(&out.join(ABLATION_JSON), &report)?;
    Ok(report)
}

/// The table with the toggle columns, desk-scale metrics and the
/// published values alongside.
pub fn ablation_csv(report: &AblationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::io("<csv>", e);
    w.write_record([
        "method",
        "spf",
        "pri",
        "ds",
        "proj",
        "cd",
        "f_score",
        "cd_standard",
        "cd_nonstandard",
        "published_cd_x1e3",
        "published_f_score",
    ])
    .map_err(io)?;
    let mark = |b: bool| if b { "yes" } else { "-" }.to_string();
    for r in &report.rows {
        let v = &r.variant;
        w.write_record([
            v.method.to_string(),
            if v.spf_levels == 0 {
                "-".into()
            } else {
                v.spf_levels.to_string()
            },
            mark(v.use_prior),
            v.sampling_name().to_string(),
            mark(v.use_proj),
            r.test.cd_dense.to_string(),
            r.test.f_score.to_string(),
            r.test.cd_standard.to_string(),
            r.test.cd_nonstandard.to_string(),
            v.published_cd.to_string(),
            v.published_f.to_string(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<csv>", e))
}

/// Parses a method list such as `AH` or `A,D,H`.
pub fn parse_methods(arg: &str) -> Result<Vec<char>> {
    let mut out = Vec::new();
    for c in arg.chars().filter(|c| !matches!(c, ',' | ' ')) {
        let m = variant(c)?.method;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config("empty method list".into()));
    }
    Ok(out)
}
