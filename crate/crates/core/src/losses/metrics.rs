use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

use super::chamfer::{chamfer_distance, nearest, NeighborSearch};

/// Precision, recall and their harmonic mean at a distance threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// F-Score with unsquared Euclidean distances compared against `threshold`.
pub fn f_score(pred: &PointCloud, truth: &PointCloud, threshold: f64, search: NeighborSearch) -> Result<FScore> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput("f-score needs two nonempty clouds".into()));
    }
    let hit_fraction = |from: &PointCloud, to: &PointCloud| {
        let hits = nearest(from.points(), to.points(), search)
            .iter()
            .filter(|(_, d2)| d2.sqrt() < threshold)
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = hit_fraction(pred, truth);
    let recall = hit_fraction(truth, pred);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        f_score: f,
    })
}

/// Mean over tracks of the mean chamfer distance between consecutive frames.
pub fn consistency(tracks: &[Vec<PointCloud>], search: NeighborSearch) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::EmptyInput("consistency needs at least one track".into()));
    }
    let mut total = 0.0;
    for (t, frames) in tracks.iter().enumerate() {
        if frames.len() < 2 {
            return Err(Error::contract(format!(
                "track {t} has {} frame(s); need at least 2",
                frames.len()
            )));
        }
        let mut sum = 0.0;
        for pair in frames.windows(2) {
            sum += chamfer_distance(&pair[0], &pair[1], search)?;
        }
        total += sum / (frames.len() - 1) as f64;
    }
    Ok(total / tracks.len() as f64)
}

/// Per-sample loss terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cd_sparse: f64,
    pub cd_dense: f64,
    pub proj_sparse: f64,
    pub proj_dense: f64,
    pub weight: f64,
    pub lambda_proj: f64,
    pub total: f64,
}

impl LossReport {
    /// `total = weight * (cd_sparse + cd_dense + lambda * (proj_sparse + proj_dense))`.
    pub fn new(
        cd_sparse: f64,
        cd_dense: f64,
        proj_sparse: f64,
        proj_dense: f64,
        weight: f64,
        lambda_proj: f64,
    ) -> Self {
        let total = weight * (cd_sparse + cd_dense + lambda_proj * (proj_sparse + proj_dense));
        Self {
            cd_sparse,
            cd_dense,
            proj_sparse,
            proj_dense,
            weight,
            lambda_proj,
            total,
        }
    }

    pub fn recombined(&self) -> f64 {
        self.weight * (self.cd_sparse + self.cd_dense + self.lambda_proj * (self.proj_sparse + self.proj_dense))
    }
}

/// Sum of per-sample totals.
pub fn batch_loss(reports: &[LossReport]) -> f64 {
    reports.iter().map(|r| r.total).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_clouds_score_one() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.1, 0.2, 0.3]]);
        let s = f_score(&a, &a, 0.01, NeighborSearch::Grid).unwrap();
        assert_eq!(s.f_score, 1.0);
    }

    #[test]
    fn far_apart_clouds_score_zero() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let b = PointCloud::new(vec![[0.4, 0.0, 0.0]]);
        assert_eq!(f_score(&a, &b, 0.01, NeighborSearch::Grid).unwrap().f_score, 0.0);
    }

    #[test]
    fn outlier_case() {
        let gt: Vec<_> = (0..9).map(|i| [i as f64 * 0.05 - 0.2, 0.0, 0.0]).collect();
        let mut pred = gt.clone();
        pred.push([0.0, 0.45, 0.45]);
        let s = f_score(
            &PointCloud::new(pred),
            &PointCloud::new(gt),
            0.01,
            NeighborSearch::BruteForce,
        )
        .unwrap();
        assert_eq!(s.precision, 0.9);
        assert_eq!(s.recall, 1.0);
        assert!((s.f_score - 2.0 * 0.9 / 1.9).abs() < 1e-15);
    }

    #[test]
    fn consistency_cases() {
        let o = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let x = PointCloud::new(vec![[1.0, 0.0, 0.0]]);
        let far = PointCloud::new(vec![[2f64.sqrt(), 0.0, 0.0]]);
        let s = NeighborSearch::Grid;
        assert_eq!(consistency(&[vec![o.clone(), o.clone(), o.clone()]], s).unwrap(), 0.0);
        assert_eq!(consistency(&[vec![o.clone(), x.clone()]], s).unwrap(), 2.0);
        let two = consistency(&[vec![o.clone(), x], vec![o.clone(), far]], s).unwrap();
        assert!((two - 3.0).abs() < 1e-12);
        assert!(consistency(&[vec![o]], s).is_err());
    }

    #[test]
    fn report_recombines_and_scales_linearly() {
        let r = LossReport::new(0.3, 0.2, 0.7, 0.1, 1.4, 0.1);
        assert!((r.total - r.recombined()).abs() <= 1e-12);
        let r2 = LossReport::new(0.3, 0.2, 0.7, 0.1, 2.8, 0.1);
        assert!((r2.total - 2.0 * r.total).abs() <= 1e-15);
        assert_eq!(LossReport::new(0.0, 0.0, 5.0, 5.0, 1.0, 0.0).total, 0.0);
    }
}
