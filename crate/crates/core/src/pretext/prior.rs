use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::gmm::GmmState;

/// Smallest allowed prototype radius.
pub const RADIUS_FLOOR: f64 = 1e-6;

/// How the dense center is derived from the mixture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Mean of the component centers weighted by hard-assignment counts.
    #[default]
    WeightedMean,
    /// Center of the component holding the most features.
    DensestCluster,
}

/// Category center in feature space and the largest distance of any
/// training feature from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub category_id: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn prototype_from_gmm(
    category_id: usize,
    gmm: &GmmState,
    features: &[Vec<f64>],
    mode: PrototypeMode,
) -> Result<Prototype> {
    if features.is_empty() {
        return Err(Error::EmptyInput("prototype needs category features".into()));
    }
    let assign = gmm.hard_assignments();
    if assign.len() != features.len() {
        return Err(Error::contract(format!(
            "mixture was fitted on {} features, got {}",
            assign.len(),
            features.len()
        )));
    }
    let k = gmm.components();
    let mut counts = vec![0usize; k];
    for a in &assign {
        counts[*a] += 1;
    }
    let dim = features[0].len();
    let center = match mode {
        PrototypeMode::WeightedMean => {
            let mut c = vec![0.0; dim];
            for (m, &cnt) in gmm.means.iter().zip(&counts) {
                for d in 0..dim {
                    c[d] += cnt as f64 * m[d];
                }
            }
            c.iter_mut().for_each(|v| *v /= features.len() as f64);
            c
        }
        PrototypeMode::DensestCluster => {
            let mut best = 0;
            for c in 1..k {
                if counts[c] > counts[best] {
                    best = c;
                }
            }
            gmm.means[best].clone()
        }
    };
    let radius = features
        .iter()
        .map(|f| distance(f, &center))
        .fold(0.0, f64::max)
        .max(RADIUS_FLOOR);
    Ok(Prototype {
        category_id,
        center,
        radius,
    })
}

/// Smallest radius-normalized distance from `feature` to any prototype.
pub fn soft_prior(feature: &[f64], prototypes: &[Prototype]) -> Result<f64> {
    if prototypes.is_empty() {
        return Err(Error::contract("soft prior needs at least one prototype"));
    }
    let mut best = f64::INFINITY;
    for p in prototypes {
        if p.center.len() != feature.len() {
            return Err(Error::dim(
                "soft_prior",
                format!("feature {} vs center {}", feature.len(), p.center.len()),
            ));
        }
        best = best.min(distance(feature, &p.center) / p.radius);
    }
    Ok(best)
}

/// Cosine similarity of two nonzero vectors, clamped to `[-1, 1]`.
pub fn cosine_gap(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_gap", format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Logistic reweighting of the feature gap `1 - cos`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyWeight {
    pub threshold: f64,
    pub steepness: f64,
}

impl Default for DifficultyWeight {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            steepness: 8.0,
        }
    }
}

impl DifficultyWeight {
    /// `1 + sigmoid(k (x - t))` with `x = 1 - cos`; lies in `(1, 2)`.
    pub fn weight(&self, cos: f64) -> f64 {
        let x = 1.0 - cos;
        1.0 + 1.0 / (1.0 + (self.steepness * (self.threshold - x)).exp())
    }
}

/// [`DifficultyWeight::weight`] with `t = 0.25`, `k = 8`.
pub fn difficulty_weight(cos: f64) -> f64 {
    DifficultyWeight::default().weight(cos)
}

/// One entry of the prototype store file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRecord {
    pub category_id: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "K")]
    pub components: usize,
    pub em_iterations: usize,
    pub seed: u64,
}

pub fn save_prototypes(
    path: &Path,
    prototypes: &[Prototype],
    components: usize,
    em_iterations: usize,
    seed: u64,
) -> Result<()> {
    let records: Vec<PrototypeRecord> = prototypes
        .iter()
        .map(|p| PrototypeRecord {
            category_id: p.category_id,
            center: p.center.clone(),
            radius: p.radius,
            dim: p.center.len(),
            components,
            em_iterations,
            seed,
        })
        .collect();
    let text = serde_json::to_string_pretty(&records).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_prototypes(path: &Path) -> Result<Vec<PrototypeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<PrototypeRecord> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    for r in &records {
        if r.center.len() != r.dim || !(r.radius >= RADIUS_FLOOR) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("category {} has an inconsistent center or radius", r.category_id),
            });
        }
    }
    Ok(records)
}

impl From<PrototypeRecord> for Prototype {
    fn from(r: PrototypeRecord) -> Self {
        Prototype {
            category_id: r.category_id,
            center: r.center,
            radius: r.radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretext::fit_gmm_em;

    #[test]
    fn weight_midpoint_and_ends() {
        assert!((difficulty_weight(0.75) - 1.5).abs() < 1e-15);
        // 1 / (1 + e^2) = (1 - tanh 1) / 2
        let expected = 1.0 + (1.0 - 1f64.tanh()) / 2.0;
        assert!((difficulty_weight(1.0) - expected).abs() < 1e-15);
        assert!((difficulty_weight(1.0) - 1.1192).abs() < 1e-4);
        assert!((difficulty_weight(-1.0) - 2.0).abs() < 1e-6);
        assert!(difficulty_weight(-1.0) < 2.0);
    }

    #[test]
    fn cosine_cases() {
        let r = [1.0, -2.0, 0.5];
        assert!((cosine_gap(&r, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_gap(&r, &[-1.0, 2.0, -0.5]).unwrap() + 1.0).abs() < 1e-15);
        assert!((cosine_gap(&r, &[3.0, -6.0, 1.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_gap(&r, &[0.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn prior_by_hand() {
        let protos = vec![
            Prototype {
                category_id: 0,
                center: vec![0.0, 0.0],
                radius: 2.0,
            },
            Prototype {
                category_id: 1,
                center: vec![3.0, 4.0],
                radius: 10.0,
            },
        ];
        // distances 5 and 0 from the two centers, scaled by 1/2 and 1/10
        assert_eq!(soft_prior(&[3.0, 4.0], &protos).unwrap(), 0.0);
        // (1, 0): 1/2 = 0.5 vs sqrt(4 + 16)/10 = 0.447
        let u = soft_prior(&[1.0, 0.0], &protos).unwrap();
        assert!((u - 20f64.sqrt() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn identical_features_give_the_radius_floor() {
        let feats = vec![vec![0.4, 0.1, -0.3]; 6];
        let g = fit_gmm_em(&feats, 2, 5, 1).unwrap();
        let p = prototype_from_gmm(0, &g, &feats, PrototypeMode::WeightedMean).unwrap();
        assert!(p.center.iter().zip(&feats[0]).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(p.radius, RADIUS_FLOOR);
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("protos.json");
        let protos = vec![Prototype {
            category_id: 2,
            center: vec![0.125, -1.5],
            radius: 0.75,
        }];
        save_prototypes(&path, &protos, 4, 20, 9).unwrap();
        let back = load_prototypes(&path).unwrap();
        assert_eq!(back[0].dim, 2);
        assert_eq!(back[0].components, 4);
        assert_eq!(Prototype::from(back[0].clone()), protos[0]);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"D\"") && raw.contains("\"em_iterations\""));
    }
}
