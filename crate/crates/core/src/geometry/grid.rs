use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

use super::{Point, PointCloud, HALF_EXTENT};

/// Dense `[C, R, R, R]` voxel volume over the normalized cube.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    values: Tensor,
}

impl VoxelGrid {
    pub fn new(values: Tensor) -> Result<Self> {
        let s = values.shape();
        if s.len() != 4 || s[1] != s[2] || s[2] != s[3] || s[1] == 0 {
            return Err(Error::dim("voxel_grid", format!("expected [C,R,R,R], got {s:?}")));
        }
        Ok(Self {
            resolution: s[1],
            values,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.resolution as f64
    }
}

/// Center of the cell with per-axis indices `(i, j, k)` = (x, y, z).
pub fn cell_center(idx: [usize; 3], r: usize) -> Point {
    let c = |i: usize| -HALF_EXTENT + (i as f64 + 0.5) / r as f64;
    [c(idx[0]), c(idx[1]), c(idx[2])]
}

fn linear_index(ix: usize, iy: usize, iz: usize, r: usize) -> usize {
    (iz * r + iy) * r + ix
}

/// Trilinear weights of `p` over the eight surrounding cell centers, as
/// `(linear cell index, weight)`. Positions beyond the outermost centers
/// clamp to the boundary cells.
pub fn trilinear_stencil(p: &Point, r: usize) -> [(usize, f64); 8] {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let t = ((p[a] + HALF_EXTENT) * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let i0 = (t.floor() as usize).min(r.saturating_sub(2));
        lo[a] = i0;
        hi[a] = (i0 + 1).min(r - 1);
        frac[a] = t - i0 as f64;
    }
    let mut out = [(0usize, 0.0f64); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let pick = |a: usize| corner >> a & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if pick(a) {
                idx[a] = hi[a];
                w *= frac[a];
            } else {
                idx[a] = lo[a];
                w *= 1.0 - frac[a];
            }
        }
        *slot = (linear_index(idx[0], idx[1], idx[2], r), w);
    }
    out
}

/// Bookkeeping from [`gridding`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GriddingStats {
    /// Points with a coordinate outside `[-0.5, 0.5]`, clamped to the boundary.
    pub out_of_range: usize,
}

/// Trilinear scatter of unit mass per point without the occupancy clamp.
pub fn gridding_unclamped(cloud: &PointCloud, r: usize) -> Result<(VoxelGrid, GriddingStats)> {
    if r == 0 {
        return Err(Error::contract("grid resolution must be positive"));
    }
    let mut values = vec![0.0; r * r * r];
    let mut stats = GriddingStats::default();
    for p in cloud.points() {
        let mut q = *p;
        if q.iter().any(|c| !(-HALF_EXTENT..=HALF_EXTENT).contains(c)) {
            stats.out_of_range += 1;
            for c in &mut q {
                *c = c.clamp(-HALF_EXTENT, HALF_EXTENT);
            }
        }
        for (idx, w) in trilinear_stencil(&q, r) {
            values[idx] += w;
        }
    }
    Ok((VoxelGrid::new(Tensor::new(vec![1, r, r, r], values)?)?, stats))
}

/// Occupancy grid: trilinear scatter followed by `v <- min(v, 1)`.
pub fn gridding(cloud: &PointCloud, r: usize) -> Result<(VoxelGrid, GriddingStats)> {
    let (grid, stats) = gridding_unclamped(cloud, r)?;
    let mut values = grid.into_values();
    values.data_mut().iter_mut().for_each(|v| *v = v.min(1.0));
    Ok((VoxelGrid::new(values)?, stats))
}

/// One point per cell whose value exceeds `threshold`, at the cell center,
/// in linear cell order. Errors when no cell qualifies.
pub fn gridding_reverse(grid: &VoxelGrid, threshold: f64) -> Result<PointCloud> {
    if grid.channels() != 1 {
        return Err(Error::dim(
            "gridding_reverse",
            format!("expected 1 channel, got {}", grid.channels()),
        ));
    }
    let r = grid.resolution();
    let mut points = Vec::new();
    for (lin, v) in grid.values().data().iter().enumerate() {
        if *v > threshold {
            let ix = lin % r;
            let iy = (lin / r) % r;
            let iz = lin / (r * r);
            points.push(cell_center([ix, iy, iz], r));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput(format!("no cell exceeds threshold {threshold}")));
    }
    Ok(PointCloud::new(points))
}

struct PointFeatureSamplingOp {
    stencils: Vec<[(usize, f64); 8]>,
    channels: usize,
    cells: usize,
    grid_shape: Vec<usize>,
}

impl CustomOp for PointFeatureSamplingOp {
    fn name(&self) -> &'static str {
        "point_feature_sampling"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let c = self.channels;
        let mut g = vec![0.0; c * self.cells];
        for (n, st) in self.stencils.iter().enumerate() {
            let go = &grad_out.data()[n * c..(n + 1) * c];
            for &(idx, w) in st {
                for (ch, gv) in go.iter().enumerate() {
                    g[ch * self.cells + idx] += w * gv;
                }
            }
        }
        vec![Some(Tensor::new(self.grid_shape.clone(), g).expect("grid grad shape"))]
    }
}

/// Trilinear interpolation of a `[C,R,R,R]` feature volume at each query,
/// giving `[N, C]`; differentiable with respect to the features.
pub fn point_feature_sampling(graph: &mut Graph, features: Var, queries: &[Point]) -> Result<Var> {
    let fv = graph.value(features);
    let s = fv.shape().to_vec();
    if s.len() != 4 || s[1] != s[2] || s[2] != s[3] {
        return Err(Error::dim(
            "point_feature_sampling",
            format!("expected [C,R,R,R], got {s:?}"),
        ));
    }
    let (c, r) = (s[0], s[1]);
    let cells = r * r * r;
    let stencils: Vec<_> = queries.iter().map(|q| trilinear_stencil(q, r)).collect();
    let mut out = vec![0.0; queries.len() * c];
    for (n, st) in stencils.iter().enumerate() {
        let row = &mut out[n * c..(n + 1) * c];
        for &(idx, w) in st {
            for (ch, o) in row.iter_mut().enumerate() {
                *o += w * fv.data()[ch * cells + idx];
            }
        }
    }
    let value = Tensor::new(vec![queries.len(), c], out)?;
    graph.custom(
        &[features],
        value,
        Box::new(PointFeatureSamplingOp {
            stencils,
            channels: c,
            cells,
            grid_shape: s,
        }),
    )
}
