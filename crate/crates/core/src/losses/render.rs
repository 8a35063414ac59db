use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rotation, HALF_EXTENT};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Largest f64 below one; rendered pixels never reach 1.
const MASK_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Soft silhouette renderer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskRenderer {
    /// Points drawn from the cloud per rendering.
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian kernel bandwidth in pixels.
    pub sigma: f64,
    /// Kernel support, in multiples of `sigma`.
    pub truncate: f64,
}

impl Default for MaskRenderer {
    fn default() -> Self {
        Self {
            samples: 512,
            height: 64,
            width: 64,
            sigma: 1.0,
            truncate: 3.0,
        }
    }
}

/// Rendered mask node plus whether the cloud had to be sampled with
/// replacement.
pub struct RenderedMask {
    pub mask: Var,
    pub resampled: bool,
}

impl MaskRenderer {
    fn kernel(&self, d: f64) -> f64 {
        if d.abs() > self.truncate * self.sigma {
            0.0
        } else {
            (-d * d / (2.0 * self.sigma * self.sigma)).exp()
        }
    }

    /// Indices of the points that contribute: all of them when the cloud
    /// has exactly `samples` points, a seeded subset when it has more, and
    /// every point plus seeded draws with replacement when it has fewer.
    pub fn sample_indices(&self, n: usize, seed: u64) -> (Vec<usize>, bool) {
        let m = self.samples;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match n.cmp(&m) {
            std::cmp::Ordering::Equal => ((0..n).collect(), false),
            std::cmp::Ordering::Greater => {
                let mut idx = sample(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                (idx, false)
            }
            std::cmp::Ordering::Less => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.extend((n..m).map(|_| rng.gen_range(0..n)));
                (idx, true)
            }
        }
    }

    /// Renders the `[N,3]` node `cloud` seen through `view` into an
    /// `[H, W]` mask, differentiable with respect to the coordinates.
    pub fn render(&self, graph: &mut Graph, cloud: Var, view: &Rotation, seed: u64) -> Result<RenderedMask> {
        let pts = graph.value(cloud).to_points()?;
        if pts.is_empty() {
            return Err(Error::EmptyInput("cannot render an empty cloud".into()));
        }
        let (indices, resampled) = self.sample_indices(pts.len(), seed);
        let (h, w) = (self.height, self.width);
        let sx = (h - 1) as f64;
        let sy = (w - 1) as f64;
        let reach = self.truncate * self.sigma;

        let mut projected = Vec::with_capacity(indices.len());
        let mut sums = vec![0.0; h * w];
        for &i in &indices {
            let q = view.apply(pts[i]);
            let raw_x = (q[0] + HALF_EXTENT) * sx;
            let raw_y = (q[1] + HALF_EXTENT) * sy;
            let px = raw_x.clamp(0.0, sx);
            let py = raw_y.clamp(0.0, sy);
            let free_x = raw_x == px;
            let free_y = raw_y == py;
            let (r0, r1) = window(px, reach, h);
            let (c0, c1) = window(py, reach, w);
            for row in r0..r1 {
                let kx = self.kernel(px - row as f64);
                if kx == 0.0 {
                    continue;
                }
                for col in c0..c1 {
                    sums[row * w + col] += kx * self.kernel(py - col as f64);
                }
            }
            projected.push(Projected {
                source: i,
                px,
                py,
                free_x,
                free_y,
            });
        }
        let values: Vec<f64> = sums.iter().map(|s| s.tanh().min(MASK_CEIL)).collect();
        let mask = graph.custom(
            &[cloud],
            Tensor::new(vec![h, w], values)?,
            Box::new(RenderOp {
                renderer: *self,
                view: *view,
                projected,
                sums,
                n_points: pts.len(),
            }),
        )?;
        Ok(RenderedMask { mask, resampled })
    }

    /// Plain mask values for a fixed cloud.
    pub fn render_values(&self, cloud: &PointCloud, view: &Rotation, seed: u64) -> Result<Tensor> {
        let mut g = Graph::new();
        let c = g.constant(cloud.to_tensor());
        let r = self.render(&mut g, c, view, seed)?;
        Ok(g.value(r.mask).clone())
    }
}

fn window(center: f64, reach: f64, size: usize) -> (usize, usize) {
    let lo = (center - reach).ceil().max(0.0) as usize;
    let hi = ((center + reach).floor() as usize + 1).min(size);
    (lo.min(size), hi)
}

struct Projected {
    source: usize,
    px: f64,
    py: f64,
    free_x: bool,
    free_y: bool,
}

struct RenderOp {
    renderer: MaskRenderer,
    view: Rotation,
    projected: Vec<Projected>,
    sums: Vec<f64>,
    n_points: usize,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "render_mask"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let r = &self.renderer;
        let (h, w) = (r.height, r.width);
        let s2 = r.sigma * r.sigma;
        let reach = r.truncate * r.sigma;
        // d mask / d pre-activation sum
        let gs: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(&self.sums)
            .map(|(g, s)| {
                let t = s.tanh();
                if t >= MASK_CEIL {
                    0.0
                } else {
                    g * (1.0 - t * t)
                }
            })
            .collect();
        let mut grad = vec![0.0; self.n_points * 3];
        for p in &self.projected {
            let (r0, r1) = window(p.px, reach, h);
            let (c0, c1) = window(p.py, reach, w);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for row in r0..r1 {
                let dx = p.px - row as f64;
                let kx = r.kernel(dx);
                if kx == 0.0 {
                    continue;
                }
                for col in c0..c1 {
                    let dy = p.py - col as f64;
                    let ky = r.kernel(dy);
                    let g = gs[row * w + col];
                    gx += g * (-dx / s2) * kx * ky;
                    gy += g * kx * (-dy / s2) * ky;
                }
            }
            let dq = [
                if p.free_x { gx * (h - 1) as f64 } else { 0.0 },
                if p.free_y { gy * (w - 1) as f64 } else { 0.0 },
                0.0,
            ];
            let dp = self.view.apply_transpose(dq);
            for c in 0..3 {
                grad[p.source * 3 + c] += dp[c];
            }
        }
        vec![Some(
            Tensor::new(vec![self.n_points, 3], grad).expect("render grad shape"),
        )]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn renderer(h: usize, samples: usize) -> MaskRenderer {
        MaskRenderer {
            samples,
            height: h,
            width: h,
            ..MaskRenderer::default()
        }
    }

    #[test]
    fn single_point_on_pixel_center() {
        // (x + 0.5) * 8 = 4 lands exactly on pixel 4 for H = 9.
        let r = renderer(9, 1);
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.3]]);
        let m = r.render_values(&cloud, &Rotation::IDENTITY, 0).unwrap();
        assert!((m.data()[4 * 9 + 4] - 1f64.tanh()).abs() < 1e-15);
        assert!((m.data()[4 * 9 + 4] - 0.76159).abs() < 5e-6);
        // pixels beyond 3 sigma see nothing
        assert_eq!(m.data()[0], 0.0);
        assert_eq!(m.data()[4 * 9 + 8], 0.0);
    }

    #[test]
    fn pixels_stay_below_one_even_when_saturated() {
        let r = renderer(8, 64);
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]; 64]);
        let m = r.render_values(&cloud, &Rotation::IDENTITY, 0).unwrap();
        assert!(m.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn small_clouds_are_resampled_with_replacement() {
        let r = renderer(8, 16);
        let (idx, flagged) = r.sample_indices(5, 1);
        assert!(flagged);
        assert_eq!(idx.len(), 16);
        assert_eq!(&idx[..5], &[0, 1, 2, 3, 4]);
        let (idx, flagged) = r.sample_indices(40, 1);
        assert!(!flagged);
        assert_eq!(idx.len(), 16);
    }
}
