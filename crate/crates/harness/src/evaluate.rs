//! Per-sample evaluation of a trained model (or of the ground truth
//! against itself) with multi-view consistency.

use std::path::{Path, PathBuf};

use protoshape_core::completion::CompletionNet;
use protoshape_core::geometry::PointCloud;
use protoshape_core::losses::{chamfer_distance, consistency, f_score, NeighborSearch};
use protoshape_core::synth::{Split, Style};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{Corpus, ShapeData};
use crate::error::{HarnessError, Result};
use crate::priors::PriorCache;
use crate::stages::{write_file, write_json};
use crate::train::{net_prior, tails};

/// What produces the predictions being scored.
pub enum Predictor<'a> {
    Model(&'a CompletionNet),
    /// The complete cloud itself; a self-test of the metrics.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub category: usize,
    pub style: Style,
    /// Means over every view of the shape.
    pub cd_dense: f64,
    pub f_score: f64,
    pub u_prior: Option<f64>,
    pub weight: Option<f64>,
    /// `standard`, `nonstandard` or `mid`, by rank of `u_prior`.
    pub split_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub split: Split,
    pub oracle: bool,
    pub samples: usize,
    pub views: usize,
    pub cd_dense: f64,
    pub f_score: f64,
    pub cd_standard: Option<f64>,
    pub cd_nonstandard: Option<f64>,
    /// Mean consecutive-view chamfer distance of each shape's predictions.
    pub consistency: f64,
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

pub fn csv_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.csv", split_name(split)))
}

pub fn summary_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}_summary.json", split_name(split)))
}

struct ShapeResult {
    cd: f64,
    f: f64,
    track: Vec<PointCloud>,
}

fn score_shape(
    cfg: &ExperimentConfig,
    predictor: &Predictor<'_>,
    priors: Option<&PriorCache>,
    shape: &ShapeData,
) -> Result<ShapeResult> {
    let mut cd = 0.0;
    let mut f = 0.0;
    let mut track = Vec::with_capacity(shape.partials.len());
    for (view, partial) in shape.partials.iter().enumerate() {
        let dense = match predictor {
            Predictor::Oracle => shape.complete.clone(),
            Predictor::Model(net) => {
                let u = match priors {
                    Some(p) => p.get(&shape.id, view)?.u,
                    None => return Err(HarnessError::Config("model evaluation needs cached priors".into())),
                };
                net.predict(partial, net_prior(cfg, u))?.1
            }
        };
        cd += chamfer_distance(&dense, &shape.complete, NeighborSearch::Grid)?;
        f += f_score(&dense, &shape.complete, cfg.train.f_threshold, NeighborSearch::Grid)?.f_score;
        track.push(dense);
    }
    let n = shape.partials.len() as f64;
    Ok(ShapeResult {
        cd: cd / n,
        f: f / n,
        track,
    })
}

/// Scores every shape of `split`, one row per shape with the metrics
/// averaged over its views.
pub fn evaluate_split(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: Split,
    predictor: &Predictor<'_>,
    priors: Option<&PriorCache>,
) -> Result<(Vec<SampleRow>, EvalSummary)> {
    let shapes = corpus.split(split);
    if shapes.is_empty() {
        return Err(HarnessError::Config(format!("split {} is empty", split_name(split))));
    }
    let results: Vec<ShapeResult> = shapes
        .par_iter()
        .map(|s| score_shape(cfg, predictor, priors, s))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(shapes.len());
    for (s, r) in shapes.iter().zip(&results) {
        let (u, w) = match priors {
            Some(p) => {
                let entries = (0..s.partials.len())
                    .map(|v| p.get(&s.id, v))
                    .collect::<Result<Vec<_>>>()?;
                let n = entries.len() as f64;
                (
                    Some(entries.iter().map(|e| e.u).sum::<f64>() / n),
                    Some(entries.iter().map(|e| e.w).sum::<f64>() / n),
                )
            }
            None => (None, None),
        };
        rows.push(SampleRow {
            sample_id: s.id.clone(),
            category: s.category,
            style: s.style,
            cd_dense: r.cd,
            f_score: r.f,
            u_prior: u,
            weight: w,
            split_tag: "mid".into(),
        });
    }
    let (mut cd_standard, mut cd_nonstandard) = (None, None);
    if priors.is_some() {
        let us: Vec<f64> = rows.iter().map(|r| r.u_prior.expect("priors present")).collect();
        let (low, high) = tails(&us);
        let mean_cd = |idx: &[usize]| idx.iter().map(|&i| rows[i].cd_dense).sum::<f64>() / idx.len() as f64;
        cd_standard = Some(mean_cd(&low));
        cd_nonstandard = Some(mean_cd(&high));
        for &i in &low {
            rows[i].split_tag = "standard".into();
        }
        for &i in &high {
            rows[i].split_tag = "nonstandard".into();
        }
    }
    let tracks: Vec<Vec<PointCloud>> = results.into_iter().map(|r| r.track).collect();
    let n = rows.len() as f64;
    let summary = EvalSummary {
        config_hash: cfg.train_hash(),
        split,
        oracle: matches!(predictor, Predictor::Oracle),
        samples: rows.len(),
        views: cfg.data.views,
        cd_dense: rows.iter().map(|r| r.cd_dense).sum::<f64>() / n,
        f_score: rows.iter().map(|r| r.f_score).sum::<f64>() / n,
        cd_standard,
        cd_nonstandard,
        consistency: consistency(&tracks, NeighborSearch::Grid)?,
    };
    Ok((rows, summary))
}

fn style_name(s: Style) -> &'static str {
    match s {
        Style::Standard => "standard",
        Style::Nonstandard => "nonstandard",
    }
}

/// Renders rows as CSV; floats use the shortest round-trip form.
pub fn rows_to_csv(rows: &[SampleRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::io("<csv>", e);
    w.write_record([
        "sample_id",
        "category",
        "style",
        "cd_dense",
        "f_score",
        "u_prior",
        "weight",
        "split_tag",
    ])
    .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            r.category.to_string(),
            style_name(r.style).to_string(),
            r.cd_dense.to_string(),
            r.f_score.to_string(),
            opt(r.u_prior),
            opt(r.weight),
            r.split_tag.clone(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<csv>", e))
}

/// Writes `<split>.csv` and `<split>_summary.json` into `dir`.
pub fn write_eval(dir: &Path, rows: &[SampleRow], summary: &EvalSummary) -> Result<()> {
    write_file(&csv_path(dir, summary.split), &rows_to_csv(rows)?)?;
    write_json(&summary_path(dir, summary.split), summary)
}
