use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::{sum_grads, Adam, Graph, ParamSet, Tensor, Var};

/// Per-point encoder widths before the latent layer.
const HIDDEN: [usize; 2] = [64, 128];

/// Shared point MLP, max pooling and a two-layer classifier head.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamSet,
    latent_dim: usize,
    classes: usize,
    trained: bool,
}

/// Classifier training settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the held-out set after training.
    pub accuracy: f64,
}

struct Bound {
    vars: Vec<Var>,
}

impl FeatureExtractor {
    pub fn new(classes: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let widths = [3, HIDDEN[0], HIDDEN[1], latent_dim];
        for l in 0..3 {
            params.normal(
                format!("point.{l}.w"),
                &[widths[l], widths[l + 1]],
                widths[l],
                1.0,
                &mut rng,
            );
            params.zeros(format!("point.{l}.b"), &[widths[l + 1]]);
        }
        let half = (latent_dim / 2).max(1);
        params.normal("head.0.w", &[latent_dim, half], latent_dim, 1.0, &mut rng);
        params.zeros("head.0.b", &[half]);
        params.normal("head.1.w", &[half, classes.max(1)], half, 1.0, &mut rng);
        params.zeros("head.1.b", &[classes.max(1)]);
        Self {
            params,
            latent_dim,
            classes,
            trained: false,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Replaces the weights (e.g. from a checkpoint) and marks the
    /// extractor as trained.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        self.params.load(entries)?;
        self.trained = true;
        Ok(())
    }

    /// Global feature node `[1, D]`.
    fn embed(&self, g: &mut Graph, b: &Bound, cloud: &PointCloud) -> Result<Var> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("feature extraction needs at least one point".into()));
        }
        let mut h = g.constant(cloud.to_tensor());
        for l in 0..3 {
            h = g.linear(h, b.vars[2 * l], Some(b.vars[2 * l + 1]))?;
            if l < 2 {
                h = g.relu(h)?;
            }
        }
        let pooled = g.max_over_points(h)?;
        g.reshape(pooled, &[1, self.latent_dim])
    }

    fn logits(&self, g: &mut Graph, b: &Bound, feature: Var) -> Result<Var> {
        let h = g.linear(feature, b.vars[6], Some(b.vars[7]))?;
        let h = g.relu(h)?;
        g.linear(h, b.vars[8], Some(b.vars[9]))
    }

    /// Latent feature of `cloud`: max-pooled per-point embeddings.
    pub fn extract(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        if !self.trained {
            log::warn!("extracting features with an untrained extractor");
        }
        let mut g = Graph::new();
        let b = Bound {
            vars: self.params.bind_frozen(&mut g),
        };
        let f = self.embed(&mut g, &b, cloud)?;
        Ok(g.value(f).data().to_vec())
    }

    /// Most likely class of `cloud`; ties go to the lowest index.
    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let mut g = Graph::new();
        let b = Bound {
            vars: self.params.bind_frozen(&mut g),
        };
        let f = self.embed(&mut g, &b, cloud)?;
        let logits = self.logits(&mut g, &b, f)?;
        let mut best = 0;
        for (i, v) in g.value(logits).data().iter().enumerate() {
            if *v > g.value(logits).data()[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &[(PointCloud, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("accuracy needs at least one sample".into()));
        }
        let mut hits = 0;
        for (cloud, label) in data {
            if self.predict(cloud)? == *label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    fn sample_step(&self, cloud: &PointCloud, label: usize) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let b = Bound {
            vars: self.params.bind(&mut g),
        };
        let f = self.embed(&mut g, &b, cloud)?;
        let logits = self.logits(&mut g, &b, f)?;
        let loss = g.softmax_cross_entropy(logits, &[label])?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        Ok((value, self.params.collect_grads(&mut grads, &b.vars)))
    }
}

/// Trains extractor and head with Adam on softmax cross-entropy and
/// reports held-out accuracy.
pub fn train_classifier(
    ext: &mut FeatureExtractor,
    train: &[(PointCloud, usize)],
    heldout: &[(PointCloud, usize)],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    for (_, label) in heldout {
        check_label(ext, *label)?;
    }
    let mut adam = Adam::new(opts.lr);
    let epoch_losses = train_classifier_epochs(ext, &mut adam, train, 0..opts.epochs, opts)?;
    let accuracy = if heldout.is_empty() {
        f64::NAN
    } else {
        ext.accuracy(heldout)?
    };
    Ok(TrainReport { epoch_losses, accuracy })
}

fn check_label(ext: &FeatureExtractor, label: usize) -> Result<()> {
    if label >= ext.classes {
        return Err(Error::contract(format!(
            "label {label} out of range for {} classes",
            ext.classes
        )));
    }
    Ok(())
}

/// Runs the given range of epochs with an external optimizer, so a run
/// split into pieces matches an uninterrupted one. Epoch `e` visits the
/// training set in an order drawn from ChaCha stream `e` of `opts.seed`.
/// Returns the mean loss of each epoch run.
pub fn train_classifier_epochs(
    ext: &mut FeatureExtractor,
    adam: &mut Adam,
    train: &[(PointCloud, usize)],
    epochs: Range<usize>,
    opts: &TrainOptions,
) -> Result<Vec<f64>> {
    for (_, label) in train {
        check_label(ext, *label)?;
    }
    let first = train.first().map(|(_, l)| *l);
    if !train.iter().any(|(_, l)| Some(*l) != first) {
        return Err(Error::contract("classifier training needs at least two categories"));
    }
    if opts.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }

    let mut epoch_losses = Vec::with_capacity(epochs.len());
    for epoch in epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let (loss, grads) = ext.sample_step(&train[i].0, train[i].1)?;
                total += loss;
                acc = Some(match acc {
                    None => grads,
                    Some(a) => sum_grads(a, &grads),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = acc
                .unwrap_or_default()
                .into_iter()
                .map(|mut t| {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                    t
                })
                .collect();
            adam.step(&mut ext.params, &grads);
        }
        epoch_losses.push(total / train.len().max(1) as f64);
    }
    ext.trained = true;
    Ok(epoch_losses)
}
