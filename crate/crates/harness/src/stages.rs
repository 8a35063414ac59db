//! Data generation, pretext training and prototype fitting.

use std::fs;
use std::path::{Path, PathBuf};

use protoshape_core::pretext::{
    fit_gmm_em, load_prototypes, prototype_from_gmm, save_prototypes, soft_prior, train_classifier_epochs,
    FeatureExtractor, Prototype, TrainOptions,
};
use protoshape_core::synth::{gen_dataset, validate, DatasetManifest, GenStats, Split};
use protoshape_core::tensor::Adam;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::error::{HarnessError, Result};

pub const EXTRACTOR_KIND: &str = "extractor";

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn extractor(&self) -> PathBuf {
        self.out.join("pretext").join("extractor.ckpt")
    }

    pub fn pretext_report(&self) -> PathBuf {
        self.out.join("pretext").join("report.json")
    }

    pub fn prototypes(&self) -> PathBuf {
        self.out.join("prototypes").join("prototypes.json")
    }

    pub fn em_report(&self) -> PathBuf {
        self.out.join("prototypes").join("em_report.json")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("train")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, format!("malformed JSON: {e}")))
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<(DatasetManifest, GenStats)> {
    let (manifest, stats) = gen_dataset(&cfg.data_dir, &cfg.dataset())?;
    validate(&cfg.data_dir, &manifest)?;
    Ok((manifest, stats))
}

/// Options of an interruptible pretext run.
#[derive(Clone, Copy, Debug, Default)]
pub struct PretextRun {
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop once this many epochs are complete.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretextReport {
    pub config_hash: String,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
    /// Held-out (val + test) accuracy; absent until training finishes.
    pub accuracy: Option<f64>,
    pub chance: f64,
    pub heldout: usize,
}

fn labelled(corpus: &Corpus, splits: &[Split]) -> Vec<(protoshape_core::geometry::PointCloud, usize)> {
    corpus
        .shapes
        .iter()
        .filter(|s| splits.contains(&s.split))
        .map(|s| (s.complete.clone(), s.category))
        .collect()
}

pub fn train_pretext(cfg: &ExperimentConfig, corpus: &Corpus, run: PretextRun) -> Result<PretextReport> {
    let paths = RunPaths::new(&cfg.out_dir);
    let hash = cfg.pretext_hash();
    let classes = corpus.categories();
    let mut ext = FeatureExtractor::new(classes, cfg.pretext.latent_dim, cfg.seed);
    let mut adam = Adam::new(cfg.pretext.lr);
    let mut losses = Vec::new();
    let mut start = 0;
    if run.resume && paths.extractor().exists() {
        let ck = Checkpoint::load_expecting(&paths.extractor(), EXTRACTOR_KIND, &hash)?;
        ext.load(ck.tensors)?;
        adam.state = ck.adam.unwrap_or_default();
        start = ck.epoch as usize;
        let prev: PretextReport = read_json(&paths.pretext_report())?;
        losses = prev.epoch_losses;
        if losses.len() != start {
            return Err(HarnessError::Config(
                "pretext report and checkpoint disagree on progress".into(),
            ));
        }
    }
    let end = run
        .stop_after
        .map_or(cfg.pretext.epochs, |s| s.min(cfg.pretext.epochs))
        .max(start);
    let train = labelled(corpus, &[Split::Train]);
    let heldout = labelled(corpus, &[Split::Val, Split::Test]);
    let opts = TrainOptions {
        epochs: cfg.pretext.epochs,
        lr: cfg.pretext.lr,
        batch_size: cfg.pretext.batch_size,
        seed: cfg.seed,
    };
    for epoch in start..end {
        let l = train_classifier_epochs(&mut ext, &mut adam, &train, epoch..epoch + 1, &opts)?;
        log::info!("pretext epoch {} loss {:.5}", epoch + 1, l[0]);
        if !l[0].is_finite() {
            return Err(HarnessError::Numeric(format!(
                "pretext loss {} at epoch {}",
                l[0],
                epoch + 1
            )));
        }
        losses.extend(l);
    }
    let finished = end == cfg.pretext.epochs;
    let accuracy = if finished { Some(ext.accuracy(&heldout)?) } else { None };
    Checkpoint::from_params(EXTRACTOR_KIND, &hash, end as u64, ext.params(), Some(&adam.state))
        .save_to(&paths.extractor())?;
    let report = PretextReport {
        config_hash: hash,
        epochs_done: end,
        epoch_losses: losses,
        accuracy,
        chance: 1.0 / classes as f64,
        heldout: heldout.len(),
    };
    write_json(&paths.pretext_report(), &report)?;
    Ok(report)
}

/// Loads the finished extractor of this configuration.
pub fn load_extractor(cfg: &ExperimentConfig, classes: usize) -> Result<FeatureExtractor> {
    let path = RunPaths::new(&cfg.out_dir).extractor();
    let ck = Checkpoint::load_expecting(&path, EXTRACTOR_KIND, &cfg.pretext_hash())?;
    if ck.epoch as usize != cfg.pretext.epochs {
        return Err(HarnessError::Config(format!(
            "extractor at {} finished {} of {} epochs; run train-pretext --resume",
            path.display(),
            ck.epoch,
            cfg.pretext.epochs
        )));
    }
    let mut ext = FeatureExtractor::new(classes, cfg.pretext.latent_dim, cfg.seed);
    ext.load(ck.tensors)?;
    Ok(ext)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEm {
    pub category: usize,
    pub features: usize,
    pub log_likelihood: Vec<f64>,
    pub reseeded: Vec<bool>,
    pub monotone: bool,
    pub radius: f64,
    /// Largest soft prior of a training complete cloud against its own
    /// category prototype; at most 1 by construction.
    pub max_own_prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub config_hash: String,
    pub categories: Vec<CategoryEm>,
}

/// True when no step that kept every component populated lowered the
/// log-likelihood by more than rounding.
pub fn em_monotone(ll: &[f64], reseeded: &[bool]) -> bool {
    ll.windows(2)
        .zip(reseeded)
        .all(|(w, &r)| r || w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

pub fn fit_prototypes(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ext: &FeatureExtractor,
) -> Result<(Vec<Prototype>, EmReport)> {
    let paths = RunPaths::new(&cfg.out_dir);
    let mut protos = Vec::new();
    let mut cats = Vec::new();
    for c in 0..corpus.categories() {
        let feats: Vec<Vec<f64>> = corpus
            .shapes
            .iter()
            .filter(|s| s.split == Split::Train && s.category == c)
            .map(|s| ext.extract(&s.complete))
            .collect::<protoshape_core::Result<_>>()?;
        let gmm = fit_gmm_em(
            &feats,
            cfg.prototype.components,
            cfg.prototype.em_iterations,
            cfg.seed.wrapping_add(c as u64),
        )?;
        let monotone = em_monotone(&gmm.log_likelihood, &gmm.reseeded);
        if !monotone {
            return Err(HarnessError::Numeric(format!(
                "EM log-likelihood decreased for category {c}: {:?}",
                gmm.log_likelihood
            )));
        }
        let proto = prototype_from_gmm(c, &gmm, &feats, cfg.prototype.mode)?;
        let max_own_prior = feats
            .iter()
            .map(|f| soft_prior(f, std::slice::from_ref(&proto)))
            .collect::<protoshape_core::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        log::info!(
            "category {c}: radius {:.4}, final log-likelihood {:.3}",
            proto.radius,
            gmm.final_log_likelihood()
        );
        cats.push(CategoryEm {
            category: c,
            features: feats.len(),
            log_likelihood: gmm.log_likelihood.clone(),
            reseeded: gmm.reseeded.clone(),
            monotone,
            radius: proto.radius,
            max_own_prior,
        });
        protos.push(proto);
    }
    ensure_dir(paths.prototypes().parent().expect("has parent"))?;
    save_prototypes(
        &paths.prototypes(),
        &protos,
        cfg.prototype.components,
        cfg.prototype.em_iterations,
        cfg.seed,
    )?;
    let report = EmReport {
        config_hash: cfg.prototype_hash(),
        categories: cats,
    };
    write_json(&paths.em_report(), &report)?;
    Ok((protos, report))
}

/// Reads the prototype store written by [`fit_prototypes`] for this
/// configuration.
pub fn read_prototypes(cfg: &ExperimentConfig) -> Result<Vec<Prototype>> {
    let paths = RunPaths::new(&cfg.out_dir);
    let report: EmReport = read_json(&paths.em_report())?;
    if report.config_hash != cfg.prototype_hash() {
        return Err(HarnessError::Config(format!(
            "prototypes in {} belong to a different configuration; rerun fit-prototypes",
            paths.out.display()
        )));
    }
    Ok(load_prototypes(&paths.prototypes())?
        .into_iter()
        .map(Prototype::from)
        .collect())
}

/// Runs whichever of pretext training and prototype fitting has no
/// current artifact, and returns the frozen extractor and prototypes.
pub fn ensure_priors_inputs(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(FeatureExtractor, Vec<Prototype>)> {
    let ext = match load_extractor(cfg, corpus.categories()) {
        Ok(e) => e,
        Err(_) => {
            train_pretext(cfg, corpus, PretextRun::default())?;
            load_extractor(cfg, corpus.categories())?
        }
    };
    let protos = match read_prototypes(cfg) {
        Ok(p) => p,
        Err(_) => fit_prototypes(cfg, corpus, &ext)?.0,
    };
    Ok((ext, protos))
}
