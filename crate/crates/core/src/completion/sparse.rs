use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_center, fps_indices, Point, PointCloud, VoxelGrid};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Lowest threshold tried before a grid counts as collapsed.
pub const MIN_THRESHOLD: f64 = 1e-3;

/// Where each selected cell places its sparse point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsePoints {
    /// The cell center; carries no gradient back to the occupancy grid.
    CellCenters,
    /// Occupancy-weighted mean of the centers of the cell and its 26
    /// neighbours; differentiable with respect to the occupancy values.
    #[default]
    Weighted,
}

/// Cells chosen by thresholding plus farthest point sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSelection {
    /// Linear cell indices in FPS order.
    pub cells: Vec<usize>,
    /// Threshold that finally admitted enough cells.
    pub threshold: f64,
    /// Centers of the selected cells.
    pub cloud: PointCloud,
}

fn cell_indices(lin: usize, r: usize) -> [usize; 3] {
    [lin % r, (lin / r) % r, lin / (r * r)]
}

/// Picks `n` cells of a one-channel grid: every cell above `theta` is a
/// candidate, the threshold halves until there are at least `n` of them,
/// and FPS over the candidate centers (starting from the first) keeps `n`.
pub fn sparse_from_grid(grid: &VoxelGrid, n: usize, theta: f64) -> Result<SparseSelection> {
    if grid.channels() != 1 {
        return Err(Error::dim(
            "sparse_from_grid",
            format!("expected 1 channel, got {}", grid.channels()),
        ));
    }
    if n == 0 {
        return Err(Error::contract("sparse point count must be positive"));
    }
    let r = grid.resolution();
    let values = grid.values().data();
    let mut threshold = theta;
    let candidates = loop {
        let c: Vec<usize> = (0..values.len()).filter(|&i| values[i] > threshold).collect();
        if c.len() >= n {
            break c;
        }
        threshold /= 2.0;
        if threshold < MIN_THRESHOLD {
            return Err(Error::EmptyInput(format!(
                "occupancy grid collapsed: {} cells above {threshold:.1e}, need {n}",
                c.len()
            )));
        }
    };
    let centers: Vec<f64> = candidates
        .iter()
        .flat_map(|&c| cell_center(cell_indices(c, r), r))
        .collect();
    let picked = fps_indices(&centers, 3, n, 0)?;
    let cells: Vec<usize> = picked.iter().map(|&i| candidates[i]).collect();
    let cloud = PointCloud::new(cells.iter().map(|&c| cell_center(cell_indices(c, r), r)).collect());
    Ok(SparseSelection {
        cells,
        threshold,
        cloud,
    })
}

fn neighbourhood(cell: usize, r: usize) -> Vec<usize> {
    let [x, y, z] = cell_indices(cell, r);
    let span = |c: usize| c.saturating_sub(1)..=(c + 1).min(r - 1);
    let mut out = Vec::with_capacity(27);
    for nz in span(z) {
        for ny in span(y) {
            for nx in span(x) {
                out.push((nz * r + ny) * r + nx);
            }
        }
    }
    out
}

struct WeightedCellsOp {
    r: usize,
    cells: Vec<usize>,
    points: Vec<Point>,
    mass: Vec<f64>,
}

impl CustomOp for WeightedCellsOp {
    fn name(&self) -> &'static str {
        "weighted_cells"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let mut g = vec![0.0; inputs[0].numel()];
        for (i, &cell) in self.cells.iter().enumerate() {
            let go = &grad_out.data()[i * 3..i * 3 + 3];
            let p = self.points[i];
            for j in neighbourhood(cell, self.r) {
                let c = cell_center(cell_indices(j, self.r), self.r);
                g[j] += (0..3).map(|a| go[a] * (c[a] - p[a])).sum::<f64>() / self.mass[i];
            }
        }
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), g).expect("occupancy grad shape"),
        )]
    }
}

/// Sparse point node `[n, 3]` for the selected cells of the occupancy node
/// `[1, R, R, R]`.
pub fn sparse_points(
    graph: &mut Graph,
    occupancy: Var,
    selection: &SparseSelection,
    mode: SparsePoints,
) -> Result<Var> {
    match mode {
        SparsePoints::CellCenters => Ok(graph.constant(selection.cloud.to_tensor())),
        SparsePoints::Weighted => {
            let ov = graph.value(occupancy);
            let r = ov.shape()[1];
            let mut points = Vec::with_capacity(selection.cells.len());
            let mut mass = Vec::with_capacity(selection.cells.len());
            for &cell in &selection.cells {
                let mut acc = [0.0; 3];
                let mut m = 0.0;
                for j in neighbourhood(cell, r) {
                    let w = ov.data()[j];
                    let c = cell_center(cell_indices(j, r), r);
                    for a in 0..3 {
                        acc[a] += w * c[a];
                    }
                    m += w;
                }
                if !(m > 0.0) {
                    return Err(Error::NonFinite(format!("occupancy mass {m} around cell {cell}")));
                }
                points.push([acc[0] / m, acc[1] / m, acc[2] / m]);
                mass.push(m);
            }
            let value = Tensor::from_points(&points);
            graph.custom(
                &[occupancy],
                value,
                Box::new(WeightedCellsOp {
                    r,
                    cells: selection.cells.clone(),
                    points,
                    mass,
                }),
            )
        }
    }
}
