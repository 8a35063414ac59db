//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use protoshape_core::synth::Split;

use crate::ablate::{parse_methods, run_ablation};
use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate_split, write_eval, Predictor};
use crate::report::{write_report, LedgerInput};
use crate::stages::{
    ensure_priors_inputs, fit_prototypes, gen_data, load_extractor, train_pretext, PretextRun, RunPaths,
};
use crate::train::{cached_priors, load_completion, train_completion, TrainPaths};

#[derive(Debug, Parser)]
#[command(
    name = "protoshape",
    version,
    about = "Prototype-aware point cloud completion experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for the corpus and every training stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker thread, for bit-stable reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory (overrides `data_dir`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Train the shape classifier whose features define the priors.
    TrainPretext {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs (resume later with --resume).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Fit per-category prototypes with EM.
    FitPrototypes,
    /// Train the completion network.
    Train,
    /// Train the A-H ablation variants and compare them.
    Ablate {
        /// Subset of methods, e.g. `AH`.
        #[arg(long, default_value = "ABCDEFGH")]
        methods: String,
    },
    /// Score a trained model on one split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle: bool,
    },
    /// Merge ledgers into JSON and plot-ready CSV.
    Report {
        /// `label=path` of a ledger; repeat for several runs.
        #[arg(long = "ledger", required = true)]
        ledgers: Vec<String>,
    },
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    Corpus::load(&cfg.data_dir, &cfg.dataset())
}

/// Runs one command; everything it reports goes to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    if cli.common.deterministic {
        // the pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let paths = RunPaths::new(&cfg.out_dir);
    match cli.command {
        Command::GenData => {
            let (m, stats) = gen_data(&cfg)?;
            let count = |s| m.split(s).count();
            let partials: usize = m.samples.iter().map(|s| s.partials.len()).sum();
            println!(
                "{} shapes in {} categories, {} partial views; train {} / val {} / test {}",
                m.samples.len(),
                m.config.categories,
                partials,
                count(Split::Train),
                count(Split::Val),
                count(Split::Test)
            );
            if stats.written == 0 {
                println!("no changes ({} files up to date)", stats.unchanged);
            } else {
                println!("wrote {} files, {} unchanged", stats.written, stats.unchanged);
            }
        }
        Command::TrainPretext { resume, stop_after } => {
            let corpus = load_corpus(&cfg)?;
            let r = train_pretext(&cfg, &corpus, PretextRun { resume, stop_after })?;
            match r.accuracy {
                Some(a) => println!(
                    "pretext: {} epochs, held-out accuracy {a:.4} (chance {:.4}, {} clouds)",
                    r.epochs_done, r.chance, r.heldout
                ),
                None => println!(
                    "pretext: stopped after {} of {} epochs",
                    r.epochs_done, cfg.pretext.epochs
                ),
            }
        }
        Command::FitPrototypes => {
            let corpus = load_corpus(&cfg)?;
            let ext = load_extractor(&cfg, corpus.categories())?;
            let (protos, report) = fit_prototypes(&cfg, &corpus, &ext)?;
            for (p, c) in protos.iter().zip(&report.categories) {
                println!(
                    "category {}: radius {:.4}, log-likelihood {:.3} -> {:.3}, monotone {}",
                    p.category_id,
                    p.radius,
                    c.log_likelihood.first().copied().unwrap_or(f64::NAN),
                    c.log_likelihood.last().copied().unwrap_or(f64::NAN),
                    c.monotone
                );
            }
            println!("prototypes written to {}", paths.prototypes().display());
        }
        Command::Train => {
            let corpus = load_corpus(&cfg)?;
            let (ext, protos) = ensure_priors_inputs(&cfg, &corpus)?;
            let dir = paths.train_dir();
            let cache = cached_priors(&cfg, &corpus, &ext, &protos, &dir)?;
            let out = train_completion(&cfg, &corpus, &cache, &dir, "custom")?;
            let first = out.ledger.epochs.first().map(|e| e.2.cd_dense);
            let last = out.ledger.epochs.last().map(|e| e.2.cd_dense);
            if let (Some(f), Some(l)) = (first, last) {
                println!("val cd_dense: epoch 1 {f:.6}, final {l:.6} (ratio {:.3})", l / f);
            }
            if let Some(t) = out.ledger.test {
                println!(
                    "test cd_dense {:.6}, f_score {:.4}; standard {:.6}, nonstandard {:.6}",
                    t.cd_dense, t.f_score, t.cd_standard, t.cd_nonstandard
                );
            }
            println!("ledger written to {}", TrainPaths::new(&dir).ledger().display());
        }
        Command::Ablate { methods } => {
            let methods = parse_methods(&methods)?;
            let corpus = load_corpus(&cfg)?;
            let out = cfg.out_dir.join("ablation");
            let report = run_ablation(&cfg, &corpus, &methods, &out)?;
            println!("method  cd          f_score  cd_std      cd_nonstd   (published cd, f)");
            for r in &report.rows {
                println!(
                    "{}       {:.6}  {:.4}   {:.6}  {:.6}  ({}, {})",
                    r.variant.method,
                    r.test.cd_dense,
                    r.test.f_score,
                    r.test.cd_standard,
                    r.test.cd_nonstandard,
                    r.variant.published_cd,
                    r.variant.published_f
                );
            }
            if let (Some(a), Some(b)) = (report.h_beats_a, report.gain_on_nonstandard) {
                println!("H cd <= A cd: {a}; nonstandard gain >= standard gain: {b}");
            }
        }
        Command::Eval {
            checkpoint,
            split,
            oracle,
        } => {
            let corpus = load_corpus(&cfg)?;
            let split = Split::from(split);
            let dir = paths.eval_dir();
            let (rows, summary) = if oracle {
                evaluate_split(&cfg, &corpus, split, &Predictor::Oracle, None)?
            } else {
                let ckpt = checkpoint.unwrap_or_else(|| TrainPaths::new(&paths.train_dir()).checkpoint());
                let net = load_completion(&cfg, &ckpt)?;
                let (ext, protos) = ensure_priors_inputs(&cfg, &corpus)?;
                let cache = cached_priors(&cfg, &corpus, &ext, &protos, &paths.train_dir())?;
                evaluate_split(&cfg, &corpus, split, &Predictor::Model(&net), Some(&cache))?
            };
            write_eval(&dir, &rows, &summary)?;
            println!(
                "{} samples: cd_dense {:.6}, f_score {:.4}, consistency {:.6}",
                summary.samples, summary.cd_dense, summary.f_score, summary.consistency
            );
        }
        Command::Report { ledgers } => {
            let inputs = ledgers
                .iter()
                .enumerate()
                .map(|(i, a)| LedgerInput::parse(a, i))
                .collect::<Result<Vec<_>>>()?;
            let out = cfg.out_dir.join("report");
            let report = write_report(&inputs, &out)?;
            println!("report of {} runs written to {}", report.runs.len(), out.display());
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps failures to exit codes (2 usage or
/// config, 3 I/O, 4 numeric).
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_hint(&e);
            e.exit_code()
        }
    }
}

fn exit_code_hint(e: &HarnessError) {
    if let HarnessError::Numeric(_) = e {
        eprintln!("numeric failure; see the diagnostics dump in the output directory if one was written");
    }
}
