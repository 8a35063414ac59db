use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rotation};
use crate::tensor::{Graph, Tensor, Var};

use super::chamfer::{chamfer, NeighborSearch};
use super::metrics::LossReport;
use super::projection::{projection_loss, target_masks, ProjectionConfig};

/// Weights and switches of the per-sample objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub lambda_proj: f64,
    pub use_proj: bool,
    pub views: usize,
    pub projection: ProjectionConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_proj: 0.1,
            use_proj: true,
            views: 8,
            projection: ProjectionConfig::default(),
        }
    }
}

/// Ground truth of one sample with its cached silhouettes.
pub struct Target<'a> {
    pub complete: &'a PointCloud,
    /// One mask per view; empty when the projection term is off.
    pub masks: &'a [Tensor],
}

/// Silhouettes of `complete` for the shared view set, or none when the
/// projection term is disabled.
pub fn target_silhouettes(
    cfg: &ObjectiveConfig,
    complete: &PointCloud,
    views: &[Rotation],
    seed: u64,
) -> Result<Vec<Tensor>> {
    if !cfg.use_proj {
        return Ok(Vec::new());
    }
    target_masks(&cfg.projection, complete, views, seed)
}

/// Weighted total loss node and its breakdown:
/// `w * (cd_sparse + cd_dense + lambda * (proj_sparse + proj_dense))`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    graph: &mut Graph,
    sparse: Var,
    dense: Var,
    target: &Target<'_>,
    weight: f64,
    views: &[Rotation],
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<(Var, LossReport)> {
    if !weight.is_finite() || weight <= 0.0 {
        return Err(Error::contract(format!("loss weight must be positive, got {weight}")));
    }
    let cd_sp = chamfer(graph, sparse, target.complete, NeighborSearch::Grid)?;
    let cd_d = chamfer(graph, dense, target.complete, NeighborSearch::Grid)?;
    let cd = graph.add(cd_sp, cd_d)?;
    let (inner, ps, pd) = if cfg.use_proj && cfg.lambda_proj != 0.0 {
        let ps = projection_loss(graph, sparse, target.masks, views, &cfg.projection, seed)?;
        let pd = projection_loss(graph, dense, target.masks, views, &cfg.projection, seed.wrapping_add(1))?;
        let proj = graph.add(ps, pd)?;
        let proj = graph.mul_scalar(proj, cfg.lambda_proj)?;
        (graph.add(cd, proj)?, graph.value(ps).item(), graph.value(pd).item())
    } else {
        (cd, 0.0, 0.0)
    };
    let total = graph.mul_scalar(inner, weight)?;
    let lambda = if cfg.use_proj { cfg.lambda_proj } else { 0.0 };
    let report = LossReport::new(
        graph.value(cd_sp).item(),
        graph.value(cd_d).item(),
        ps,
        pd,
        weight,
        lambda,
    );
    Ok((total, report))
}
