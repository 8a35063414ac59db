use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rotation};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

use super::render::MaskRenderer;

/// Which mask sits inside the logarithms of the binary cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceOrientation {
    /// Prediction as the coefficient, ground truth inside the logs.
    #[default]
    AsPrinted,
    /// Ground truth as the target, prediction inside the logs.
    Standard,
}

/// Projection loss settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub renderer: MaskRenderer,
    pub eps: f64,
    pub orientation: BceOrientation,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            renderer: MaskRenderer::default(),
            eps: 1e-8,
            orientation: BceOrientation::AsPrinted,
        }
    }
}

/// Upper clamp keeping `1 - m - eps` positive.
fn clamp_mask(m: f64, eps: f64) -> f64 {
    m.min(1.0 - 2.0 * eps)
}

/// Mean binary cross-entropy between two same-shape masks, together with
/// its derivative with respect to `pred` (per pixel, already divided by the
/// pixel count).
pub fn mask_bce(pred: &Tensor, truth: &Tensor, orientation: BceOrientation, eps: f64) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(
            "mask_bce",
            format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        ));
    }
    let n = pred.numel() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.numel());
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match orientation {
            BceOrientation::AsPrinted => {
                let tc = clamp_mask(t, eps);
                let l1 = (tc + eps).ln();
                let l0 = (1.0 - tc - eps).ln();
                loss -= p * l1 + (1.0 - p) * l0;
                grad.push(-(l1 - l0) / n);
            }
            BceOrientation::Standard => {
                let pc = clamp_mask(p, eps);
                loss -= t * (pc + eps).ln() + (1.0 - t) * (1.0 - pc - eps).ln();
                let g = if p > pc {
                    0.0
                } else {
                    -(t / (pc + eps) - (1.0 - t) / (1.0 - pc - eps))
                };
                grad.push(g / n);
            }
        }
    }
    Ok((loss / n, grad))
}

struct MaskBceOp {
    grad: Vec<f64>,
}

impl CustomOp for MaskBceOp {
    fn name(&self) -> &'static str {
        "mask_bce"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad_out.item();
        let data = self.grad.iter().map(|v| v * g).collect();
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), data).expect("bce grad shape"),
        )]
    }
}

/// Graph node for [`mask_bce`] against a fixed target mask.
pub fn mask_bce_node(
    graph: &mut Graph,
    pred: Var,
    truth: &Tensor,
    orientation: BceOrientation,
    eps: f64,
) -> Result<Var> {
    let (loss, grad) = mask_bce(graph.value(pred), truth, orientation, eps)?;
    graph.custom(&[pred], Tensor::scalar(loss), Box::new(MaskBceOp { grad }))
}

/// Ground-truth masks for a view set, reusable across training steps.
pub fn target_masks(cfg: &ProjectionConfig, truth: &PointCloud, views: &[Rotation], seed: u64) -> Result<Vec<Tensor>> {
    views
        .iter()
        .enumerate()
        .map(|(v, rot)| cfg.renderer.render_values(truth, rot, view_seed(seed, v, 1)))
        .collect()
}

fn view_seed(seed: u64, view: usize, role: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((view as u64) << 8)
        .wrapping_add(role)
}

/// Multi-view silhouette loss of the `[N,3]` node `pred` against
/// precomputed target masks, averaged over views.
pub fn projection_loss(
    graph: &mut Graph,
    pred: Var,
    targets: &[Tensor],
    views: &[Rotation],
    cfg: &ProjectionConfig,
    seed: u64,
) -> Result<Var> {
    if views.is_empty() || views.len() != targets.len() {
        return Err(Error::contract(format!(
            "projection loss needs one target mask per view ({} views, {} masks)",
            views.len(),
            targets.len()
        )));
    }
    let mut per_view = Vec::with_capacity(views.len());
    for (v, (rot, target)) in views.iter().zip(targets).enumerate() {
        let rendered = cfg.renderer.render(graph, pred, rot, view_seed(seed, v, 0))?;
        let bce = mask_bce_node(graph, rendered.mask, target, cfg.orientation, cfg.eps)?;
        per_view.push(graph.reshape(bce, &[1])?);
    }
    let stacked = graph.concat(&per_view)?;
    graph.mean(stacked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_masks_give_the_epsilon_floor() {
        let z = Tensor::zeros(&[4, 4]);
        let (loss, _) = mask_bce(&z, &z, BceOrientation::AsPrinted, 1e-8).unwrap();
        assert!((loss - (-(1.0f64 - 1e-8).ln())).abs() < 1e-20);
        assert!((loss - 1e-8).abs() < 1e-15);
    }

    #[test]
    fn hand_built_two_by_two_masks() {
        let eps = 1e-8;
        let pred = Tensor::new(vec![2, 2], vec![0.2, 0.9, 0.0, 0.5]).unwrap();
        let truth = Tensor::new(vec![2, 2], vec![0.1, 0.7, 0.3, 0.0]).unwrap();
        let by_hand = -((0.2 * (0.1f64 + eps).ln() + 0.8 * (0.9f64 - eps).ln())
            + (0.9 * (0.7f64 + eps).ln() + 0.1 * (0.3f64 - eps).ln())
            + (0.0 * (0.3f64 + eps).ln() + 1.0 * (0.7f64 - eps).ln())
            + (0.5 * (0.0f64 + eps).ln() + 0.5 * (1.0f64 - eps).ln()))
            / 4.0;
        let (loss, _) = mask_bce(&pred, &truth, BceOrientation::AsPrinted, eps).unwrap();
        assert!((loss - by_hand).abs() < 1e-12);

        let standard = -((0.1 * (0.2f64 + eps).ln() + 0.9 * (0.8f64 - eps).ln())
            + (0.7 * (0.9f64 + eps).ln() + 0.3 * (0.1f64 - eps).ln())
            + (0.3 * (0.0f64 + eps).ln() + 0.7 * (1.0f64 - eps).ln())
            + (0.0 * (0.5f64 + eps).ln() + 1.0 * (0.5f64 - eps).ln()))
            / 4.0;
        let (loss, _) = mask_bce(&pred, &truth, BceOrientation::Standard, eps).unwrap();
        assert!((loss - standard).abs() < 1e-12);
    }

    #[test]
    fn as_printed_slope_vanishes_at_half() {
        let pred = Tensor::new(vec![1, 3], vec![0.1, 0.6, 0.95]).unwrap();
        let truth = Tensor::full(&[1, 3], 0.5);
        let (_, grad) = mask_bce(&pred, &truth, BceOrientation::AsPrinted, 1e-8).unwrap();
        // slope is ln((0.5 + eps) / (0.5 - eps)) / 3, i.e. about 1.3e-8
        assert!(grad.iter().all(|g| g.abs() < 2e-8));
    }

    #[test]
    fn saturated_truth_does_not_produce_nan() {
        let pred = Tensor::full(&[2, 2], 0.3);
        let truth = Tensor::full(&[2, 2], 1.0 - f64::EPSILON / 2.0);
        let (loss, grad) = mask_bce(&pred, &truth, BceOrientation::AsPrinted, 1e-8).unwrap();
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
    }
}
