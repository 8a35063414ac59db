use crate::error::{Error, Result};

use super::PointCloud;

/// Greedy max-min selection over `n = data.len() / dim` row vectors.
///
/// Starts from `seed_index`; each further pick maximizes the squared
/// distance to the already selected set, ties going to the lowest index.
pub fn fps_indices(data: &[f64], dim: usize, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = if dim == 0 { 0 } else { data.len() / dim };
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "farthest point sampling needs 1 <= m <= N, got m={m}, N={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::contract(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    Ok(if dim == 3 {
        fps_loop(n, m, seed_index, |i, j| {
            let (a, b) = (&data[i * 3..i * 3 + 3], &data[j * 3..j * 3 + 3]);
            (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2])
        })
    } else {
        fps_loop(n, m, seed_index, |i, j| {
            let (a, b) = (&data[i * dim..(i + 1) * dim], &data[j * dim..(j + 1) * dim]);
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        })
    })
}

/// Max-min loop over `n` items given a squared distance; each pass both
/// shrinks the running minima and finds the next pick.
fn fps_loop(n: usize, m: usize, seed_index: usize, dist2: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut pick = seed_index;
    while selected.len() < m {
        selected.push(pick);
        min_d[pick] = f64::NEG_INFINITY;
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_d.iter_mut().enumerate() {
            if *d > f64::NEG_INFINITY {
                let nd = dist2(i, pick);
                if nd < *d {
                    *d = nd;
                }
                // strict comparison keeps the lowest index on ties
                if *d > best_d {
                    best_d = *d;
                    best = i;
                }
            }
        }
        pick = best;
    }
    selected
}

/// Farthest point sampling of `m` points; returns the subset and the
/// indices it was drawn from, in selection order.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<(PointCloud, Vec<usize>)> {
    let flat: Vec<f64> = cloud.points().iter().flatten().copied().collect();
    let idx = fps_indices(&flat, 3, m, seed_index)?;
    Ok((cloud.select(&idx), idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{squared_distance, Point};
    use rand::{seq::index::sample, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_selection_is_a_permutation() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.3, 0.0], [0.2, 0.2, 0.2]]);
        let (_, mut idx) = farthest_point_sampling(&cloud, 4, 2).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn square_corners_pick_the_diagonal_first() {
        let pts: Vec<Point> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let cloud = PointCloud::new(pts.clone());
        // brute force: candidate maximizing distance to the seed
        let far = (1..4)
            .max_by(|&a, &b| squared_distance(&pts[0], &pts[a]).total_cmp(&squared_distance(&pts[0], &pts[b])))
            .unwrap();
        let (sub, _) = farthest_point_sampling(&cloud, 2, 0).unwrap();
        assert_eq!(sub.points()[1], pts[far]);
        assert_eq!(sub.points()[1], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_oversampling() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 3]);
        assert!(farthest_point_sampling(&cloud, 4, 0).is_err());
        assert!(farthest_point_sampling(&cloud, 0, 0).is_err());
    }

    fn min_pairwise(pts: &[Point]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.min(squared_distance(&pts[i], &pts[j]));
            }
        }
        best
    }

    #[test]
    fn fps_beats_random_subsets_on_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..50)
                .map(|_| {
                    [
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ]
                })
                .collect();
            let cloud = PointCloud::new(pts.clone());
            let m = 8;
            let (sub, _) = farthest_point_sampling(&cloud, m, 0).unwrap();
            let fps_spread = min_pairwise(sub.points());
            let mut best_random = 0.0f64;
            for _ in 0..100 {
                let idx = sample(&mut rng, 50, m);
                let subset: Vec<Point> = idx.iter().map(|i| pts[i]).collect();
                best_random = best_random.max(min_pairwise(&subset));
            }
            assert!(fps_spread >= best_random, "{fps_spread} vs {best_random}");
        }
    }

    #[test]
    fn output_is_subset_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Point> = (0..40).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::new(pts.clone());
        let (sub, idx) = farthest_point_sampling(&cloud, 10, 3).unwrap();
        for (p, i) in sub.points().iter().zip(idx) {
            assert_eq!(*p, pts[i]);
        }
    }
}
