//! Soft priors and sample weights, computed once per partial view with
//! the extractor and prototypes frozen.

use std::collections::HashMap;

use protoshape_core::pretext::{cosine_gap, soft_prior, DifficultyWeight, FeatureExtractor, Prototype};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Sampling};
use crate::corpus::{Corpus, ShapeData};
use crate::error::{HarnessError, Result};

/// Samples re-derived from scratch to validate a cache.
pub const CACHE_CHECK_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub id: String,
    pub view: usize,
    /// Soft prior of the partial view.
    pub u: f64,
    /// Cosine similarity of complete and partial features.
    pub cos: f64,
    /// Euclidean feature gap over the category radius.
    pub gap: f64,
    /// Loss weight under the configured sampling mode.
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorCache {
    pub config_hash: String,
    pub entries: Vec<PriorEntry>,
    #[serde(skip)]
    index: HashMap<(String, usize), usize>,
}

fn weight_for(sampling: Sampling, curve: &DifficultyWeight, cos: f64, gap: f64) -> f64 {
    match sampling {
        Sampling::None => 1.0,
        Sampling::Cos => curve.weight(cos),
        // same logistic curve, with the gap taking the place of 1 - cos
        Sampling::L2 => curve.weight(1.0 - gap),
    }
}

/// Prior entries of every view of one shape.
pub fn shape_entries(
    cfg: &ExperimentConfig,
    ext: &FeatureExtractor,
    protos: &[Prototype],
    shape: &ShapeData,
) -> Result<Vec<PriorEntry>> {
    let r = ext.extract(&shape.complete)?;
    let radius = protos
        .iter()
        .find(|p| p.category_id == shape.category)
        .map(|p| p.radius)
        .ok_or_else(|| HarnessError::Config(format!("no prototype for category {}", shape.category)))?;
    shape
        .partials
        .iter()
        .enumerate()
        .map(|(view, partial)| {
            let rt = ext.extract(partial)?;
            let u = soft_prior(&rt, protos)?;
            let cos = cosine_gap(&r, &rt)?;
            let gap = r.iter().zip(&rt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / radius;
            Ok(PriorEntry {
                id: shape.id.clone(),
                view,
                u,
                cos,
                gap,
                w: weight_for(cfg.train.sampling, &cfg.weighting, cos, gap),
            })
        })
        .collect()
}

impl PriorCache {
    pub fn compute(
        cfg: &ExperimentConfig,
        ext: &FeatureExtractor,
        protos: &[Prototype],
        corpus: &Corpus,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for shape in &corpus.shapes {
            entries.extend(shape_entries(cfg, ext, protos, shape)?);
        }
        Ok(Self::from_entries(cfg.train_hash(), entries))
    }

    pub fn from_entries(config_hash: String, entries: Vec<PriorEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.id.clone(), e.view), i))
            .collect();
        Self {
            config_hash,
            entries,
            index,
        }
    }

    pub fn get(&self, id: &str, view: usize) -> Result<&PriorEntry> {
        self.index
            .get(&(id.to_string(), view))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| HarnessError::Config(format!("no cached prior for {id} view {view}")))
    }

    /// Recomputes [`CACHE_CHECK_SAMPLES`] evenly spaced shapes and returns
    /// the largest deviation from the cached values.
    pub fn verify(
        &self,
        cfg: &ExperimentConfig,
        ext: &FeatureExtractor,
        protos: &[Prototype],
        corpus: &Corpus,
    ) -> Result<f64> {
        let n = corpus.shapes.len();
        let step = (n / CACHE_CHECK_SAMPLES).max(1);
        let mut worst = 0.0f64;
        for shape in corpus.shapes.iter().step_by(step).take(CACHE_CHECK_SAMPLES) {
            for fresh in shape_entries(cfg, ext, protos, shape)? {
                let cached = self.get(&fresh.id, fresh.view)?;
                for (a, b) in [
                    (fresh.u, cached.u),
                    (fresh.cos, cached.cos),
                    (fresh.gap, cached.gap),
                    (fresh.w, cached.w),
                ] {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok(worst)
    }
}
