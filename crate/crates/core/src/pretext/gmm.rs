use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::fps_indices;

/// Lower bound on every per-dimension variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Components whose total responsibility falls below this count as empty.
const EMPTY_MASS: f64 = 1e-10;

/// Diagonal-covariance Gaussian mixture after EM.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmState {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// `responsibilities[k][i]`: share of feature `i` owned by component `k`.
    pub responsibilities: Vec<Vec<f64>>,
    /// Data log-likelihood before every iteration and after the last one.
    pub log_likelihood: Vec<f64>,
    /// Whether iteration `t` had to reseed an empty component.
    pub reseeded: Vec<bool>,
}

impl GmmState {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Component with the largest responsibility for each feature; ties go
    /// to the lowest component index.
    pub fn hard_assignments(&self) -> Vec<usize> {
        let n = self.responsibilities.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..self.components() {
                    if self.responsibilities[k][i] > self.responsibilities[best][i] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.len() {
        let diff = x[d] - mean[d];
        acc += (2.0 * std::f64::consts::PI * var[d]).ln() + diff * diff / var[d];
    }
    -0.5 * acc
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn global_variance(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len() as f64;
    let dim = features[0].len();
    (0..dim)
        .map(|d| {
            let mean = features.iter().map(|f| f[d]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
            var.max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Fills `resp` (K x N) and returns the data log-likelihood.
fn e_step(features: &[Vec<f64>], weights: &[f64], means: &[Vec<f64>], vars: &[Vec<f64>], resp: &mut [Vec<f64>]) -> f64 {
    let k = weights.len();
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for (i, x) in features.iter().enumerate() {
        for c in 0..k {
            logp[c] = weights[c].ln() + log_density(x, &means[c], &vars[c]);
        }
        let norm = log_sum_exp(&logp);
        total += norm;
        for c in 0..k {
            resp[c][i] = (logp[c] - norm).exp();
        }
    }
    total
}

/// Default number of seeded starts tried by [`fit_gmm_em`].
pub const DEFAULT_RESTARTS: usize = 8;

/// Runs `iterations` rounds of EM on `features` (N x D) with `k`
/// diagonal Gaussians, keeping the best of [`DEFAULT_RESTARTS`] starts.
pub fn fit_gmm_em(features: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<GmmState> {
    fit_gmm_em_restarts(features, k, iterations, seed, DEFAULT_RESTARTS)
}

/// EM from `restarts` seeded starts; the run with the highest final
/// log-likelihood wins, ties going to the earliest start.
///
/// Each run places its means at `k` features picked by farthest point
/// sampling from a seeded start, weights at `1/k` and variances at the
/// global per-dimension variance. A component left without responsibility
/// is moved to the feature farthest from all current means.
pub fn fit_gmm_em_restarts(
    features: &[Vec<f64>],
    k: usize,
    iterations: usize,
    seed: u64,
    restarts: usize,
) -> Result<GmmState> {
    let n = features.len();
    if k == 0 || n < k {
        return Err(Error::contract(format!(
            "EM needs at least K = {k} >= 1 features, got {n}"
        )));
    }
    if restarts == 0 {
        return Err(Error::contract("EM needs at least one start"));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::dim(
            "fit_gmm_em",
            "features must share one nonzero dimension".to_string(),
        ));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit_gmm_em input".into()));
    }
    let flat: Vec<f64> = features.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<GmmState> = None;
    for _ in 0..restarts {
        let start = rng.gen_range(0..n);
        let init = fps_indices(&flat, dim, k, start)?;
        let run = fit_from(features, &init, iterations);
        let better = match &best {
            None => true,
            Some(b) => run.final_log_likelihood() > b.final_log_likelihood(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn fit_from(features: &[Vec<f64>], init: &[usize], iterations: usize) -> GmmState {
    let (n, k, dim) = (features.len(), init.len(), features[0].len());
    let global = global_variance(features);
    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<Vec<f64>> = init.iter().map(|&i| features[i].clone()).collect();
    let mut vars = vec![global.clone(); k];
    let mut resp = vec![vec![0.0; n]; k];
    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    let mut reseeded = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        log_likelihood.push(e_step(features, &weights, &means, &vars, &mut resp));

        let mut any_empty = false;
        for c in 0..k {
            let mass: f64 = resp[c].iter().sum();
            if mass < EMPTY_MASS {
                any_empty = true;
                continue;
            }
            weights[c] = mass / n as f64;
            for d in 0..dim {
                means[c][d] = resp[c].iter().zip(features).map(|(r, x)| r * x[d]).sum::<f64>() / mass;
            }
            for d in 0..dim {
                let m = means[c][d];
                let v = resp[c]
                    .iter()
                    .zip(features)
                    .map(|(r, x)| r * (x[d] - m).powi(2))
                    .sum::<f64>()
                    / mass;
                vars[c][d] = v.max(VARIANCE_FLOOR);
            }
        }
        if any_empty {
            for c in 0..k {
                if resp[c].iter().sum::<f64>() < EMPTY_MASS {
                    let far = farthest_from(features, &means);
                    means[c] = features[far].clone();
                    vars[c] = global.clone();
                    weights[c] = 1.0 / k as f64;
                }
            }
            let s: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= s);
        }
        reseeded.push(any_empty);
    }
    log_likelihood.push(e_step(features, &weights, &means, &vars, &mut resp));

    GmmState {
        weights,
        means,
        variances: vars,
        responsibilities: resp,
        log_likelihood,
        reseeded,
    }
}

/// Index of the feature whose nearest mean is farthest away.
fn farthest_from(features: &[Vec<f64>], means: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in features.iter().enumerate() {
        let d = means
            .iter()
            .map(|m| m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_blob(center: &[f64], sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + sigma * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_component_is_the_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = gaussian_blob(&[1.0, -2.0, 0.5], 0.7, 40, &mut rng);
        let g = fit_gmm_em(&data, 1, 20, 3).unwrap();
        assert_eq!(g.weights, vec![1.0]);
        for d in 0..3 {
            let mean = data.iter().map(|x| x[d]).sum::<f64>() / 40.0;
            assert!((g.means[0][d] - mean).abs() < 1e-12);
            let var = data.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / 40.0;
            assert!((g.variances[0][d] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn two_separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        b[0] = 10.0;
        let mut data = gaussian_blob(&a, 1.0, 150, &mut rng);
        data.extend(gaussian_blob(&b, 1.0, 150, &mut rng));
        // rescale so the blobs sit 10 sigma apart with sigma = 0.1
        let data: Vec<Vec<f64>> = data
            .into_iter()
            .map(|x| x.into_iter().map(|v| v * 0.1).collect())
            .collect();
        let g = fit_gmm_em(&data, 2, 20, 0).unwrap();
        for truth in [&a, &b] {
            let truth: Vec<f64> = truth.iter().map(|v| v * 0.1).collect();
            let best = g
                .means
                .iter()
                .map(|m| m.iter().zip(&truth).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "mean off by {best}: {:?}", g.means);
        }
    }

    #[test]
    fn identical_features_collapse_to_the_floor() {
        let data = vec![vec![0.3, -0.2]; 10];
        let g = fit_gmm_em(&data, 3, 5, 7).unwrap();
        for c in 0..3 {
            assert!((g.means[c][0] - 0.3).abs() < 1e-12 && (g.means[c][1] + 0.2).abs() < 1e-12);
            assert!(g.variances[c].iter().all(|v| *v == VARIANCE_FLOOR));
        }
    }

    #[test]
    fn too_few_features_is_a_contract_error() {
        let data = vec![vec![0.0; 4]; 3];
        assert!(matches!(fit_gmm_em(&data, 4, 20, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn weights_remain_a_distribution_on_clumped_data() {
        // two tight clumps and a near-duplicate point
        let mut data = vec![vec![0.0, 0.0]; 5];
        data.extend(vec![vec![100.0, 0.0]; 5]);
        data.push(vec![0.0, 0.001]);
        let g = fit_gmm_em(&data, 3, 10, 0).unwrap();
        assert!(g.weights.iter().all(|w| *w > 0.0));
        let s: f64 = g.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}
