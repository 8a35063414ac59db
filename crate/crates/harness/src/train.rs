//! Completion training with cached priors, per-epoch validation and a
//! JSON-lines ledger.

use std::path::{Path, PathBuf};
use std::time::Instant;

use protoshape_core::completion::CompletionNet;
use protoshape_core::geometry::Rotation;
use protoshape_core::losses::{
    chamfer_distance, f_score, target_silhouettes, total_loss, LossReport, NeighborSearch, Target,
};
use protoshape_core::synth::Split;
use protoshape_core::tensor::{Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::corpus::{Corpus, ShapeData};
use crate::error::{HarnessError, Result};
use crate::priors::PriorCache;
use crate::stages::{ensure_dir, read_json, write_file, write_json};

pub const COMPLETION_KIND: &str = "completion";

/// Share of a split, ranked by prior, treated as standard (lowest) and
/// nonstandard (highest).
pub const TAIL_SHARE: f64 = 0.2;

pub struct TrainPaths {
    pub dir: PathBuf,
}

impl TrainPaths {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("completion.ckpt")
    }
    pub fn ledger(&self) -> PathBuf {
        self.dir.join("ledger.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("ledger.timing.jsonl")
    }
    pub fn priors(&self) -> PathBuf {
        self.dir.join("priors.json")
    }
    pub fn nan_dump(&self) -> PathBuf {
        self.dir.join("nan_dump.json")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cd_sparse: f64,
    pub cd_dense: f64,
    pub proj_sparse: f64,
    pub proj_dense: f64,
    pub total: f64,
    pub weight: f64,
}

impl LossTerms {
    fn add(&mut self, r: &LossReport) {
        self.cd_sparse += r.cd_sparse;
        self.cd_dense += r.cd_dense;
        self.proj_sparse += r.proj_sparse;
        self.proj_dense += r.proj_dense;
        self.total += r.total;
        self.weight += r.weight;
    }

    fn scaled(mut self, s: f64) -> Self {
        for v in [
            &mut self.cd_sparse,
            &mut self.cd_dense,
            &mut self.proj_sparse,
            &mut self.proj_dense,
            &mut self.total,
            &mut self.weight,
        ] {
            *v *= s;
        }
        self
    }
}

/// Metrics of one split, overall and on the prior-ranked tails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub cd_dense: f64,
    pub f_score: f64,
    pub cd_standard: f64,
    pub cd_nonstandard: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerRow {
    Header {
        config_hash: String,
        method: String,
        train_samples: usize,
        val_samples: usize,
    },
    Epoch {
        epoch: usize,
        train: LossTerms,
        val: SplitMetrics,
    },
    Final {
        test: SplitMetrics,
    },
}

/// Parsed ledger file.
#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    pub config_hash: String,
    pub method: String,
    pub epochs: Vec<(usize, LossTerms, SplitMetrics)>,
    pub test: Option<SplitMetrics>,
}

impl Ledger {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut ledger = Ledger {
            config_hash: String::new(),
            method: String::new(),
            epochs: Vec::new(),
            test: None,
        };
        for (n, line) in text.lines().enumerate() {
            let row: LedgerRow =
                serde_json::from_str(line).map_err(|e| HarnessError::io(path, format!("line {}: {e}", n + 1)))?;
            match row {
                LedgerRow::Header {
                    config_hash, method, ..
                } => {
                    ledger.config_hash = config_hash;
                    ledger.method = method;
                }
                LedgerRow::Epoch { epoch, train, val } => {
                    if ledger.epochs.last().is_some_and(|(e, _, _)| *e >= epoch) {
                        return Err(HarnessError::io(path, format!("epoch {epoch} out of order")));
                    }
                    ledger.epochs.push((epoch, train, val));
                }
                LedgerRow::Final { test } => ledger.test = Some(test),
            }
        }
        Ok(ledger)
    }
}

/// One partial view to predict, with its cached prior.
#[derive(Clone, Copy)]
struct Item<'a> {
    shape: &'a ShapeData,
    view: usize,
    u: f64,
}

/// Prior value fed to the network: the cached prior, or 1 when the
/// configuration discards it.
pub fn net_prior(cfg: &ExperimentConfig, u: f64) -> f64 {
    if cfg.train.use_prior {
        u
    } else {
        1.0
    }
}

/// Evaluates dense predictions on `items`, splitting the tails by prior.
fn evaluate(
    cfg: &ExperimentConfig,
    net: &CompletionNet,
    items: &[Item<'_>],
) -> Result<(SplitMetrics, Vec<(f64, f64)>)> {
    let per: Vec<(f64, f64)> = items
        .par_iter()
        .map(|it| -> Result<(f64, f64)> {
            let (_, dense) = net.predict(&it.shape.partials[it.view], net_prior(cfg, it.u))?;
            let cd = chamfer_distance(&dense, &it.shape.complete, NeighborSearch::Grid)?;
            let f = f_score(&dense, &it.shape.complete, cfg.train.f_threshold, NeighborSearch::Grid)?.f_score;
            Ok((cd, f))
        })
        .collect::<Result<_>>()?;
    let priors: Vec<f64> = items.iter().map(|it| it.u).collect();
    let cds: Vec<f64> = per.iter().map(|p| p.0).collect();
    let (std_idx, non_idx) = tails(&priors);
    let mean = |v: &mut dyn Iterator<Item = f64>, n: usize| v.sum::<f64>() / n.max(1) as f64;
    let m = SplitMetrics {
        cd_dense: mean(&mut cds.iter().copied(), cds.len()),
        f_score: mean(&mut per.iter().map(|p| p.1), per.len()),
        cd_standard: mean(&mut std_idx.iter().map(|&i| cds[i]), std_idx.len()),
        cd_nonstandard: mean(&mut non_idx.iter().map(|&i| cds[i]), non_idx.len()),
        samples: items.len(),
    };
    Ok((m, per))
}

/// Indices of the lowest and highest [`TAIL_SHARE`] of `priors`; ties
/// keep input order.
pub fn tails(priors: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| priors[a].total_cmp(&priors[b]));
    let k = ((priors.len() as f64 * TAIL_SHARE).round() as usize)
        .max(1)
        .min(priors.len());
    let low = order[..k].to_vec();
    let high = order[priors.len() - k..].to_vec();
    (low, high)
}

fn items<'a>(shapes: &[&'a ShapeData], views: usize, cache: &PriorCache) -> Result<Vec<Item<'a>>> {
    let mut out = Vec::new();
    for s in shapes {
        for view in 0..views.min(s.partials.len()) {
            out.push(Item {
                shape: s,
                view,
                u: cache.get(&s.id, view)?.u,
            });
        }
    }
    Ok(out)
}

/// Projection views shared by every sample of a run.
pub fn projection_views(cfg: &ExperimentConfig) -> Vec<Rotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7072_6f6a);
    (0..cfg.objective.views).map(|_| Rotation::random(&mut rng)).collect()
}

#[derive(Serialize)]
struct NanDump<'a> {
    epoch: usize,
    batch: Vec<(&'a str, usize)>,
    terms: Vec<Option<LossReport>>,
}

/// Outcome of [`train_completion`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: CompletionNet,
    pub ledger: Ledger,
}

/// Trains the completion network into `dir` and returns the final model
/// and its ledger.
pub fn train_completion(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    cache: &PriorCache,
    dir: &Path,
    method: &str,
) -> Result<TrainOutcome> {
    let paths = TrainPaths::new(dir);
    ensure_dir(dir)?;
    let hash = cfg.train_hash();
    let train_shapes = corpus.split(Split::Train);
    let val_shapes = corpus.split(Split::Val);
    let test_shapes = corpus.split(Split::Test);
    let views = projection_views(cfg);
    let masks: Vec<Vec<Tensor>> = train_shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            target_silhouettes(&cfg.objective, &s.complete, &views, cfg.seed.wrapping_add(i as u64)).map_err(Into::into)
        })
        .collect::<Result<_>>()?;
    let val_items = items(&val_shapes, cfg.train.val_views, cache)?;
    let test_items = items(&test_shapes, cfg.data.views, cache)?;

    let mut net = CompletionNet::new(cfg.network.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.train.lr);
    let mut ledger_text = String::new();
    let mut timing_text = String::new();
    let header = LedgerRow::Header {
        config_hash: hash.clone(),
        method: method.to_string(),
        train_samples: train_shapes.len(),
        val_samples: val_items.len(),
    };
    push(&mut ledger_text, &header);
    let mut ledger = Ledger {
        config_hash: hash.clone(),
        method: method.to_string(),
        epochs: Vec::new(),
        test: None,
    };

    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train_shapes.len()).collect();
        order.shuffle(&mut rng);
        let picks: Vec<(usize, usize)> = order
            .iter()
            .map(|&i| (i, rng.gen_range(0..train_shapes[i].partials.len())))
            .collect();
        let mut sums = LossTerms::default();
        for (b, batch) in picks.chunks(cfg.train.batch_size).enumerate() {
            let results: Vec<Result<(LossReport, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&(i, view)| {
                    let shape = train_shapes[i];
                    let entry = cache.get(&shape.id, view)?;
                    let mut g = Graph::new();
                    let bound = net.bind(&mut g);
                    let u = g.constant(Tensor::scalar(net_prior(cfg, entry.u)));
                    let out = net.forward(&mut g, &bound, &shape.partials[view], u)?;
                    let target = Target {
                        complete: &shape.complete,
                        masks: &masks[i],
                    };
                    let seed = cfg.seed ^ ((epoch as u64) << 32) ^ (b as u64) << 16 ^ i as u64;
                    let (loss, report) = total_loss(
                        &mut g,
                        out.sparse,
                        out.dense,
                        &target,
                        entry.w,
                        &views,
                        &cfg.objective,
                        seed,
                    )?;
                    let mut grads = g.backward(loss)?;
                    Ok((report, net.params().collect_grads(&mut grads, bound.vars())))
                })
                .collect();
            let mut reports = Vec::with_capacity(batch.len());
            let mut acc: Option<Vec<Tensor>> = None;
            let mut failure = None;
            for r in results {
                match r {
                    Ok((report, grads)) => {
                        if !report.total.is_finite() || grads.iter().any(|t| !t.is_finite()) {
                            failure.get_or_insert_with(|| format!("non-finite loss or gradient ({})", report.total));
                        }
                        reports.push(Some(report));
                        acc = Some(match acc {
                            None => grads,
                            Some(a) => protoshape_core::tensor::sum_grads(a, &grads),
                        });
                    }
                    Err(HarnessError::Core(protoshape_core::Error::NonFinite(m))) => {
                        failure.get_or_insert(m);
                        reports.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some(reason) = failure {
                let dump = NanDump {
                    epoch: epoch + 1,
                    batch: batch.iter().map(|&(i, v)| (train_shapes[i].id.as_str(), v)).collect(),
                    terms: reports,
                };
                write_json(&paths.nan_dump(), &dump)?;
                return Err(HarnessError::Numeric(format!(
                    "{reason} in epoch {}, batch {b}; diagnostics in {}",
                    epoch + 1,
                    paths.nan_dump().display()
                )));
            }
            for r in reports.iter().flatten() {
                sums.add(r);
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = acc
                .expect("nonempty batch")
                .into_iter()
                .map(|mut t| {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                    t
                })
                .collect();
            adam.step(net.params_mut(), &grads);
        }
        let train_terms = sums.scaled(1.0 / picks.len().max(1) as f64);
        let (val, _) = evaluate(cfg, &net, &val_items)?;
        log::info!(
            "epoch {} loss {:.5} val cd {:.5} (standard {:.5}, nonstandard {:.5})",
            epoch + 1,
            train_terms.total,
            val.cd_dense,
            val.cd_standard,
            val.cd_nonstandard
        );
        push(
            &mut ledger_text,
            &LedgerRow::Epoch {
                epoch: epoch + 1,
                train: train_terms,
                val,
            },
        );
        push(
            &mut timing_text,
            &Timing {
                epoch: epoch + 1,
                wall_time_s: started.elapsed().as_secs_f64(),
            },
        );
        ledger.epochs.push((epoch + 1, train_terms, val));
    }
    let (test, _) = evaluate(cfg, &net, &test_items)?;
    push(&mut ledger_text, &LedgerRow::Final { test });
    ledger.test = Some(test);

    Checkpoint::from_params(
        COMPLETION_KIND,
        &hash,
        cfg.train.epochs as u64,
        net.params(),
        Some(&adam.state),
    )
    .save_to(&paths.checkpoint())?;
    write_file(&paths.ledger(), ledger_text.as_bytes())?;
    write_file(&paths.timing(), timing_text.as_bytes())?;
    Ok(TrainOutcome { net, ledger })
}

#[derive(Serialize)]
struct Timing {
    epoch: usize,
    wall_time_s: f64,
}

fn push<T: Serialize>(text: &mut String, row: &T) {
    text.push_str(&serde_json::to_string(row).expect("row serializes"));
    text.push('\n');
}

/// Loads the trained network of this configuration.
pub fn load_completion(cfg: &ExperimentConfig, path: &Path) -> Result<CompletionNet> {
    let ck = Checkpoint::load_expecting(path, COMPLETION_KIND, &cfg.train_hash())?;
    let mut net = CompletionNet::new(cfg.network.clone(), cfg.seed)?;
    net.params_mut().load(ck.tensors)?;
    Ok(net)
}

/// Largest tolerated difference between cached and recomputed priors.
pub const CACHE_TOLERANCE: f64 = 1e-12;

/// Loads the prior table in `dir` if it belongs to this configuration,
/// otherwise computes and stores one; either way a sample of entries is
/// recomputed and compared.
pub fn cached_priors(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    ext: &protoshape_core::pretext::FeatureExtractor,
    protos: &[protoshape_core::pretext::Prototype],
    dir: &Path,
) -> Result<PriorCache> {
    let path = TrainPaths::new(dir).priors();
    let cache = match read_json::<PriorCache>(&path) {
        Ok(c) if c.config_hash == cfg.train_hash() => PriorCache::from_entries(c.config_hash, c.entries),
        _ => {
            let c = PriorCache::compute(cfg, ext, protos, corpus)?;
            write_json(&path, &c)?;
            c
        }
    };
    let deviation = cache.verify(cfg, ext, protos, corpus)?;
    log::info!("prior cache check: max deviation {deviation:e}");
    if deviation > CACHE_TOLERANCE {
        return Err(HarnessError::Numeric(format!(
            "cached priors in {} deviate from fresh values by {deviation:e}",
            path.display()
        )));
    }
    Ok(cache)
}
