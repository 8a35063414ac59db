use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    encode_pcf, farthest_point_sampling, make_partial, random_unit_vector, read_pcf, Point, PointCloud,
};

use super::shapes::{gen_shape, ShapeSpec, Style, FAMILIES};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Fresh views tried when a z-buffer pass keeps too few points.
const VIEW_TRIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub categories: usize,
    pub per_category: usize,
    pub nonstandard_fraction: f64,
    pub n_complete: usize,
    pub n_partial: usize,
    pub views: usize,
    /// Side of the z-buffer image used to carve partials.
    pub image_res: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            categories: FAMILIES,
            per_category: 100,
            nonstandard_fraction: 0.2,
            n_complete: 512,
            n_partial: 128,
            views: 8,
            image_res: 32,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.categories > FAMILIES {
            return Err(Error::contract(format!("categories must be in 1..={FAMILIES}")));
        }
        if self.per_category < 10 {
            return Err(Error::contract("per_category must be at least 10"));
        }
        if !(0.0..=1.0).contains(&self.nonstandard_fraction) {
            return Err(Error::contract("nonstandard_fraction must lie in [0, 1]"));
        }
        if self.n_partial == 0 || self.n_partial > self.n_complete || self.views == 0 || self.image_res == 0 {
            return Err(Error::contract(
                "need 0 < n_partial <= n_complete, views > 0, image_res > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialRecord {
    pub path: String,
    pub view: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub category: usize,
    pub style: Style,
    pub split: Split,
    pub seed: u64,
    pub complete: String,
    pub partials: Vec<PartialRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn sample(&self, id: &str) -> Result<&SampleRecord> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::contract(format!("unknown sample id {id:?}")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// A complete cloud and all its views, before anything touches disk.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedShape {
    /// Complete cloud, already rounded to storage precision.
    pub complete: PointCloud,
    pub views: Vec<Point>,
    /// Z-buffer survivors per view, before resampling to a fixed count.
    pub visible: Vec<PointCloud>,
    pub partials: Vec<PointCloud>,
}

fn round_to_f32(cloud: PointCloud) -> PointCloud {
    PointCloud::new(
        cloud
            .into_points()
            .into_iter()
            .map(|p| p.map(|c| c as f32 as f64))
            .collect(),
    )
}

/// Cycles through `cloud` to reach `n` points, or FPS-subsamples it down.
fn fixed_count(cloud: &PointCloud, n: usize) -> Result<PointCloud> {
    if cloud.len() >= n {
        Ok(farthest_point_sampling(cloud, n, 0)?.0)
    } else {
        let idx: Vec<usize> = (0..n).map(|i| i % cloud.len()).collect();
        Ok(cloud.select(&idx))
    }
}

/// Generates the complete cloud and `views` partials for one shape.
pub fn generate_shape(spec: &ShapeSpec, config: &DatasetConfig) -> Result<GeneratedShape> {
    let complete = round_to_f32(gen_shape(spec, config.n_complete)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_u64);
    let mut views = Vec::with_capacity(config.views);
    let mut visible = Vec::with_capacity(config.views);
    let mut partials = Vec::with_capacity(config.views);
    for _ in 0..config.views {
        let mut best: Option<(Point, PointCloud)> = None;
        for _ in 0..VIEW_TRIES {
            let view = random_unit_vector(&mut rng);
            let p = make_partial(&complete, view, config.image_res)?.cloud;
            let enough = p.len() * 2 >= config.n_partial;
            if best.as_ref().is_none_or(|(_, b)| p.len() > b.len()) {
                best = Some((view, p));
            }
            if enough {
                break;
            }
        }
        let (view, p) = best.expect("at least one view tried");
        partials.push(fixed_count(&p, config.n_partial)?);
        views.push(view);
        visible.push(p);
    }
    Ok(GeneratedShape {
        complete,
        views,
        visible,
        partials,
    })
}

/// 64-bit FNV-1a over the master seed and the sample id.
pub fn sample_seed(master: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in master.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn sample_id(category: usize, index: usize) -> String {
    format!("c{category}_{index:04}")
}

/// Style of every shape in one category: a seeded choice of
/// `round(fraction * n)` nonstandard members.
fn assign_styles(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Style> {
    let k = (fraction * n as f64).round() as usize;
    let mut styles: Vec<Style> = (0..n)
        .map(|i| if i < k { Style::Nonstandard } else { Style::Standard })
        .collect();
    styles.shuffle(rng);
    styles
}

/// 80/10/10 split of a group of `n` members, order shuffled.
fn assign_splits(n: usize, rng: &mut ChaCha8Rng) -> Vec<Split> {
    let val = (n as f64 * 0.1).round() as usize;
    let test = (n as f64 * 0.1).round() as usize;
    let mut out: Vec<Split> = (0..n)
        .map(|i| {
            if i < val {
                Split::Val
            } else if i < val + test {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Ids, specs and splits of the whole corpus, without generating clouds.
pub fn plan_dataset(config: &DatasetConfig) -> Result<Vec<(SampleRecord, ShapeSpec)>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.categories * config.per_category);
    for c in 0..config.categories {
        let styles = assign_styles(config.per_category, config.nonstandard_fraction, &mut rng);
        let mut splits = vec![Split::Train; config.per_category];
        for style in [Style::Standard, Style::Nonstandard] {
            let members: Vec<usize> = (0..config.per_category).filter(|&i| styles[i] == style).collect();
            for (i, s) in members.iter().zip(assign_splits(members.len(), &mut rng)) {
                splits[*i] = s;
            }
        }
        for i in 0..config.per_category {
            let id = sample_id(c, i);
            let seed = sample_seed(config.seed, &id);
            let spec = ShapeSpec {
                category: c,
                style: styles[i],
                seed,
            };
            let record = SampleRecord {
                complete: format!("complete/{id}.pcf"),
                partials: Vec::new(),
                id,
                category: c,
                style: styles[i],
                split: splits[i],
                seed,
            };
            out.push((record, spec));
        }
    }
    Ok(out)
}

/// Files touched by [`gen_dataset`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenStats {
    pub written: usize,
    pub unchanged: usize,
}

/// Writes `bytes` unless the file already holds exactly them.
fn write_if_changed(path: &Path, bytes: &[u8], stats: &mut GenStats) -> Result<()> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        stats.unchanged += 1;
        return Ok(());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    stats.written += 1;
    Ok(())
}

/// Generates the corpus under `root` and writes its manifest.
pub fn gen_dataset(root: &Path, config: &DatasetConfig) -> Result<(DatasetManifest, GenStats)> {
    let plan = plan_dataset(config)?;
    for dir in ["complete", "partial"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut stats = GenStats::default();
    let mut samples = Vec::with_capacity(plan.len());
    for (mut record, spec) in plan {
        let shape = generate_shape(&spec, config)?;
        write_if_changed(&root.join(&record.complete), &encode_pcf(&shape.complete), &mut stats)?;
        for (v, (cloud, view)) in shape.partials.iter().zip(&shape.views).enumerate() {
            let path = format!("partial/{}_{v}.pcf", record.id);
            write_if_changed(&root.join(&path), &encode_pcf(cloud), &mut stats)?;
            record.partials.push(PartialRecord { path, view: *view });
        }
        samples.push(record);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        config: *config,
        samples,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_if_changed(&root.join(MANIFEST_FILE), text.as_bytes(), &mut stats)?;
    Ok((manifest, stats))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        detail: e.to_string(),
    })
}

/// Checks that ids are unique and every referenced cloud exists, parses,
/// is normalized and has the configured size.
pub fn validate(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let bad = |path: &Path, detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if manifest.version != MANIFEST_VERSION {
        return Err(bad(
            &root.join(MANIFEST_FILE),
            format!("unsupported version {}", manifest.version),
        ));
    }
    let mut seen = HashSet::new();
    for s in &manifest.samples {
        if !seen.insert(s.id.as_str()) {
            return Err(bad(&root.join(MANIFEST_FILE), format!("duplicate id {}", s.id)));
        }
        let files = std::iter::once((&s.complete, manifest.config.n_complete))
            .chain(s.partials.iter().map(|p| (&p.path, manifest.config.n_partial)));
        for (rel, n) in files {
            let path = root.join(rel);
            let cloud = read_pcf(&path)?;
            if cloud.len() != n {
                return Err(bad(&path, format!("expected {n} points, found {}", cloud.len())));
            }
            if !cloud.is_normalized() {
                return Err(bad(&path, "points outside the unit cube".into()));
            }
        }
    }
    Ok(())
}

/// One training example: a partial view, its complete shape and the
/// cached prior and weight once the pretext stage has run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub view: usize,
    pub category: usize,
    pub style: Style,
    pub partial: PointCloud,
    pub complete: PointCloud,
    pub u: Option<f64>,
    pub w: Option<f64>,
}

pub fn load_sample(manifest: &DatasetManifest, root: &Path, id: &str, view: usize) -> Result<TrainSample> {
    let record = manifest.sample(id)?;
    let partial = record
        .partials
        .get(view)
        .ok_or_else(|| Error::contract(format!("sample {id} has no view {view}")))?;
    Ok(TrainSample {
        id: id.to_string(),
        view,
        category: record.category,
        style: record.style,
        partial: read_pcf(&root.join(&partial.path))?,
        complete: read_pcf(&root.join(&record.complete))?,
        u: None,
        w: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            per_category: 10,
            n_complete: 128,
            n_partial: 32,
            views: 2,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn fnv_matches_reference_vector() {
        // FNV-1a of the empty string is the offset basis; of "a" is known
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        h ^= b'a' as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
        assert_eq!(h, 0xaf63_dc4c_8601_ec8c);
        assert_ne!(sample_seed(0, "c0_0000"), sample_seed(1, "c0_0000"));
        assert_ne!(sample_seed(0, "c0_0000"), sample_seed(0, "c0_0001"));
    }

    #[test]
    fn zero_fraction_is_all_standard() {
        let cfg = DatasetConfig {
            nonstandard_fraction: 0.0,
            ..small()
        };
        assert!(plan_dataset(&cfg)
            .unwrap()
            .iter()
            .all(|(r, _)| r.style == Style::Standard));
    }

    #[test]
    fn split_proportions_per_group() {
        let cfg = DatasetConfig {
            per_category: 100,
            ..small()
        };
        let plan = plan_dataset(&cfg).unwrap();
        for c in 0..4 {
            for (style, n) in [(Style::Standard, 80.0), (Style::Nonstandard, 20.0)] {
                let group: Vec<_> = plan
                    .iter()
                    .filter(|(r, _)| r.category == c && r.style == style)
                    .collect();
                assert_eq!(group.len() as f64, n);
                for (split, share) in [(Split::Train, 0.8), (Split::Val, 0.1), (Split::Test, 0.1)] {
                    let k = group.iter().filter(|(r, _)| r.split == split).count() as f64;
                    assert!((k - share * n).abs() <= 1.0, "{c} {style:?} {split:?}: {k}");
                }
            }
        }
    }

    #[test]
    fn too_small_category_is_rejected() {
        let cfg = DatasetConfig {
            per_category: 9,
            ..small()
        };
        assert!(plan_dataset(&cfg).is_err());
    }

    #[test]
    fn partials_have_the_fixed_count() {
        let (r, spec) = plan_dataset(&small()).unwrap().remove(3);
        let shape = generate_shape(&spec, &small()).unwrap();
        assert_eq!(r.id, "c0_0003");
        assert_eq!(shape.complete.len(), 128);
        assert!(shape.partials.iter().all(|p| p.len() == 32));
    }
}
