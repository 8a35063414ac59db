use std::path::Path;

use protoshape_core::geometry::{read_pcf, PointCloud};
use protoshape_core::synth::{read_manifest, validate, DatasetConfig, DatasetManifest, Split, Style};

use crate::error::{HarnessError, Result};

/// One shape with its complete cloud and every partial view.
#[derive(Clone, Debug)]
pub struct ShapeData {
    pub id: String,
    pub category: usize,
    pub style: Style,
    pub split: Split,
    pub complete: PointCloud,
    pub partials: Vec<PointCloud>,
}

/// The whole on-disk corpus, read into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub shapes: Vec<ShapeData>,
}

impl Corpus {
    /// Reads and validates the corpus under `root`, refusing one generated
    /// from a different configuration.
    pub fn load(root: &Path, expected: &DatasetConfig) -> Result<Self> {
        let manifest = read_manifest(root)?;
        if &manifest.config != expected {
            return Err(HarnessError::Config(format!(
                "dataset at {} was generated with a different configuration; rerun gen-data",
                root.display()
            )));
        }
        validate(root, &manifest)?;
        let mut shapes = Vec::with_capacity(manifest.samples.len());
        for s in &manifest.samples {
            let partials = s
                .partials
                .iter()
                .map(|p| read_pcf(&root.join(&p.path)))
                .collect::<protoshape_core::Result<Vec<_>>>()?;
            shapes.push(ShapeData {
                id: s.id.clone(),
                category: s.category,
                style: s.style,
                split: s.split,
                complete: read_pcf(&root.join(&s.complete))?,
                partials,
            });
        }
        Ok(Self { manifest, shapes })
    }

    pub fn split(&self, split: Split) -> Vec<&ShapeData> {
        self.shapes.iter().filter(|s| s.split == split).collect()
    }

    pub fn categories(&self) -> usize {
        self.manifest.config.categories
    }
}
