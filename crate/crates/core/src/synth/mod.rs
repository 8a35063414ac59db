//! Synthetic shape families and the on-disk corpus built from them.

mod dataset;
mod shapes;

pub use dataset::{
    gen_dataset, generate_shape, load_sample, plan_dataset, read_manifest, sample_id, sample_seed, validate,
    DatasetConfig, DatasetManifest, GenStats, GeneratedShape, PartialRecord, SampleRecord, Split, TrainSample,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use shapes::{canonical_shape, gen_shape, ShapeSpec, Style, FAMILIES, FAMILY_NAMES, MIN_POINTS, STANDARD_JITTER};
