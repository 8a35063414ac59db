use crate::error::{Error, Result};
use crate::geometry::{squared_distance, Point, PointCloud};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Nearest neighbour search strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NeighborSearch {
    /// Exhaustive `O(|A||B|)` scan.
    BruteForce,
    /// Uniform bucket grid with shell-by-shell expansion.
    #[default]
    Grid,
}

/// `(index, squared distance)` of the nearest point of `targets` for each
/// query; ties go to the lowest target index.
pub fn nearest_brute(queries: &[Point], targets: &[Point]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, t) in targets.iter().enumerate() {
                let d = squared_distance(q, t);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect()
}

/// Bucket grid over a fixed point set for exact nearest neighbour queries.
pub struct NeighborGrid<'a> {
    points: &'a [Point],
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).max(1);
        let cell = extent / per_axis as f64;
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1);
        }
        let ncell = dims[0] * dims[1] * dims[2];
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncell + 1],
            order: vec![0; points.len()],
        };
        let keys: Vec<usize> = points.iter().map(|p| grid.key(grid.cell_of(p))).collect();
        for &k in &keys {
            grid.starts[k + 1] += 1;
        }
        for i in 0..ncell {
            grid.starts[i + 1] += grid.starts[i];
        }
        let mut fill = grid.starts.clone();
        // ascending point index within each bucket
        for (i, &k) in keys.iter().enumerate() {
            grid.order[fill[k]] = i;
            fill[k] += 1;
        }
        grid
    }

    fn cell_of(&self, p: &Point) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let t = ((p[a] - self.origin[a]) / self.cell).floor();
            c[a] = (t.max(0.0) as usize).min(self.dims[a] - 1);
        }
        c
    }

    fn key(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_bucket(&self, c: [usize; 3], q: &Point, best: &mut (usize, f64)) {
        let k = self.key(c);
        for &i in &self.order[self.starts[k]..self.starts[k + 1]] {
            let d = squared_distance(q, &self.points[i]);
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        }
    }

    /// Exact nearest neighbour of `q`, matching [`nearest_brute`].
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let c = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_shell = self.dims.iter().copied().max().unwrap_or(1);
        for s in 0..=max_shell {
            let s_i = s as isize;
            let lo: Vec<isize> = (0..3).map(|a| c[a] as isize - s_i).collect();
            let hi: Vec<isize> = (0..3).map(|a| c[a] as isize + s_i).collect();
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let on_yz_face = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    let xs: Vec<isize> = if on_yz_face {
                        (lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1)).collect()
                    } else {
                        [lo[0], hi[0]]
                            .into_iter()
                            .filter(|x| *x >= 0 && *x < self.dims[0] as isize)
                            .collect()
                    };
                    for x in xs {
                        self.scan_bucket([x as usize, y as usize, z as usize], q, &mut best);
                    }
                }
            }
            // Anything unscanned lies beyond one of the box faces that still
            // has cells behind it.
            let mut bound = f64::INFINITY;
            let mut covered = true;
            for a in 0..3 {
                if lo[a] > 0 {
                    covered = false;
                    let edge = self.origin[a] + lo[a] as f64 * self.cell;
                    bound = bound.min((q[a] - edge).max(0.0));
                }
                if hi[a] < self.dims[a] as isize - 1 {
                    covered = false;
                    let edge = self.origin[a] + (hi[a] + 1) as f64 * self.cell;
                    bound = bound.min((edge - q[a]).max(0.0));
                }
            }
            if covered || best.1 < bound * bound {
                break;
            }
        }
        best
    }
}

/// Nearest neighbours with the chosen strategy.
pub fn nearest(queries: &[Point], targets: &[Point], search: NeighborSearch) -> Vec<(usize, f64)> {
    match search {
        NeighborSearch::BruteForce => nearest_brute(queries, targets),
        NeighborSearch::Grid => {
            let grid = NeighborGrid::new(targets);
            queries.iter().map(|q| grid.nearest(q)).collect()
        }
    }
}

fn check_nonempty(a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer distance needs two nonempty clouds".into()));
    }
    Ok(())
}

/// Symmetric mean squared nearest-neighbour distance.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud, search: NeighborSearch) -> Result<f64> {
    check_nonempty(a.points(), b.points())?;
    let ab = nearest(a.points(), b.points(), search);
    let ba = nearest(b.points(), a.points(), search);
    Ok(mean_d2(&ab) + mean_d2(&ba))
}

fn mean_d2(nn: &[(usize, f64)]) -> f64 {
    nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64
}

struct ChamferOp {
    target: Vec<Point>,
    a_to_b: Vec<usize>,
    b_to_a: Vec<usize>,
}

impl CustomOp for ChamferOp {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let a = inputs[0].data();
        let na = self.a_to_b.len() as f64;
        let nb = self.b_to_a.len() as f64;
        let g = grad_out.item();
        let mut ga = vec![0.0; a.len()];
        for (i, &j) in self.a_to_b.iter().enumerate() {
            for c in 0..3 {
                ga[i * 3 + c] += g * 2.0 * (a[i * 3 + c] - self.target[j][c]) / na;
            }
        }
        for (j, &i) in self.b_to_a.iter().enumerate() {
            for c in 0..3 {
                ga[i * 3 + c] += g * 2.0 * (a[i * 3 + c] - self.target[j][c]) / nb;
            }
        }
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), ga).expect("chamfer grad shape"),
        )]
    }
}

/// Chamfer distance between the `[N,3]` node `pred` and a fixed cloud,
/// differentiable with respect to `pred`.
pub fn chamfer(graph: &mut Graph, pred: Var, target: &PointCloud, search: NeighborSearch) -> Result<Var> {
    let a = graph.value(pred).to_points()?;
    check_nonempty(&a, target.points())?;
    let ab = nearest(&a, target.points(), search);
    let ba = nearest(target.points(), &a, search);
    let value = mean_d2(&ab) + mean_d2(&ba);
    graph.custom(
        &[pred],
        Tensor::scalar(value),
        Box::new(ChamferOp {
            target: target.points().to_vec(),
            a_to_b: ab.into_iter().map(|(i, _)| i).collect(),
            b_to_a: ba.into_iter().map(|(i, _)| i).collect(),
        }),
    )
}
