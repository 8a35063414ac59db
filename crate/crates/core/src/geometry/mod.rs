//! Point cloud and voxel primitives.

mod grid;
mod io;
mod partial;
mod sampling;

pub use grid::{
    cell_center, gridding, gridding_reverse, gridding_unclamped, point_feature_sampling, trilinear_stencil,
    GriddingStats, VoxelGrid,
};
pub use io::{decode_pcf, encode_pcf, read_pcf, write_pcf, PCF_MAGIC};
pub use partial::{make_partial, Partial};
pub use sampling::{farthest_point_sampling, fps_indices};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Point = [f64; 3];

/// Half extent of the normalized unit cube.
pub const HALF_EXTENT: f64 = 0.5;

/// Ordered set of 3-D points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_points(&self.points)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self::new(t.to_points()?))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    /// True when every coordinate lies in `[-0.5, 0.5]`.
    pub fn is_normalized(&self) -> bool {
        self.points
            .iter()
            .flatten()
            .all(|c| (-HALF_EXTENT..=HALF_EXTENT).contains(c))
    }

    /// Rotates every point by `rot` (row-major matrix applied as `rot * p`).
    pub fn rotated(&self, rot: &Rotation) -> Self {
        Self::new(self.points.iter().map(|p| rot.apply(*p)).collect())
    }
}

/// Result of [`normalize`], with the parameters of the inverse map
/// `raw = p * scale + center`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub center: Point,
    pub scale: f64,
    /// Set when every input point coincided and the scale hit its floor.
    pub degenerate: bool,
}

impl Normalized {
    pub fn denormalize(&self) -> Vec<Point> {
        self.cloud
            .points()
            .iter()
            .map(|p| {
                [
                    p[0] * self.scale + self.center[0],
                    p[1] * self.scale + self.center[1],
                    p[2] * self.scale + self.center[2],
                ]
            })
            .collect()
    }
}

const SCALE_FLOOR: f64 = 1e-9;

/// Centers the bounding box at the origin and scales its longest side to 1.
pub fn normalize(raw: &[Point]) -> Result<Normalized> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("normalize needs at least one point".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in raw {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let degenerate = extent < SCALE_FLOOR;
    let scale = extent.max(SCALE_FLOOR);
    let points = raw
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = ((p[a] - center[a]) / scale).clamp(-HALF_EXTENT, HALF_EXTENT);
            }
            q
        })
        .collect();
    Ok(Normalized {
        cloud: PointCloud::new(points),
        center,
        scale,
        degenerate,
    })
}

pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Proper rotation stored as a row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    pub fn apply_transpose(&self, p: Point) -> Point {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[1][0] * p[1] + m[2][0] * p[2],
            m[0][1] * p[0] + m[1][1] * p[1] + m[2][1] * p[2],
            m[0][2] * p[0] + m[1][2] * p[1] + m[2][2] * p[2],
        ]
    }

    /// Uniformly distributed rotation (unit quaternion from a 4-D Gaussian).
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut q = [0.0f64; 4];
        loop {
            for c in &mut q {
                *c = StandardNormal.sample(rng);
            }
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-6 {
                q.iter_mut().for_each(|c| *c /= n);
                break;
            }
        }
        let [w, x, y, z] = q;
        Rotation([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    /// Rotation taking the unit vector `v` onto `+z`.
    pub fn aligning_to_z(v: Point) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 1e-12) {
            return Err(Error::contract("view direction must be nonzero"));
        }
        let v = [v[0] / n, v[1] / n, v[2] / n];
        let c = v[2];
        if c < -1.0 + 1e-12 {
            // half turn about x
            return Ok(Rotation([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]));
        }
        // axis = v x z = (v_y, -v_x, 0); Rodrigues with k = 1/(1+c)
        let (ax, ay) = (v[1], -v[0]);
        let k = 1.0 / (1.0 + c);
        Ok(Rotation([
            [c + ax * ax * k, ax * ay * k, ay],
            [ax * ay * k, c + ay * ay * k, -ax],
            [-ay, ax, c],
        ]))
    }
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Point {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_corners_normalize_to_half_unit() {
        let mut raw = Vec::new();
        for i in 0..8 {
            raw.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        let n = normalize(&raw).unwrap();
        assert!(!n.degenerate);
        for (p, q) in raw.iter().zip(n.cloud.points()) {
            for a in 0..3 {
                assert_eq!(q[a], p[a] - 0.5);
            }
        }
    }

    #[test]
    fn single_point_is_degenerate_and_maps_to_origin() {
        let n = normalize(&[[3.0, -2.0, 7.5]]).unwrap();
        assert!(n.degenerate);
        assert_eq!(n.cloud.points()[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw: Vec<Point> = (0..50)
            .map(|_| {
                [
                    rng.gen_range(-3.0..5.0),
                    rng.gen_range(10.0..11.0),
                    rng.gen_range(-0.2..0.4),
                ]
            })
            .collect();
        let n = normalize(&raw).unwrap();
        assert!(n.cloud.is_normalized());
        for (p, q) in raw.iter().zip(n.denormalize()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_empty() {
        assert!(normalize(&[]).is_err());
    }

    #[test]
    fn aligning_rotation_maps_view_to_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v = random_unit_vector(&mut rng);
            let r = Rotation::aligning_to_z(v).unwrap();
            let z = r.apply(v);
            assert!((z[0]).abs() < 1e-12 && (z[1]).abs() < 1e-12 && (z[2] - 1.0).abs() < 1e-12);
            let back = r.apply_transpose(z);
            for a in 0..3 {
                assert!((back[a] - v[a]).abs() < 1e-12);
            }
        }
        let r = Rotation::aligning_to_z([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(r.apply([0.0, 0.0, -1.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn random_rotation_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = Rotation::random(&mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r.0[i][k] * r.0[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
