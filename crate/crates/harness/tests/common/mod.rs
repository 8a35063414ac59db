#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protoshape::ExperimentConfig;

/// A corpus and network small enough to train in seconds.
pub const TINY: &str = r#"
seed = 3

[data]
categories = 2
per_category = 10
n_complete = 256
n_partial = 64
views = 3
image_res = 24

[pretext]
latent_dim = 16
epochs = 3
batch_size = 8

[prototype]
components = 2
em_iterations = 5

[network]
grid_resolution = 8
levels = 2
channels = [2, 4]
n_sparse = 16
rho = 2
mlp_hidden = 8
spf_levels = 2

[objective]
views = 2

[objective.projection.renderer]
samples = 64
height = 16
width = 16

[train]
epochs = 2
batch_size = 4
val_views = 2
"#;

/// Writes the tiny config into `dir` with data and outputs beneath it.
pub fn tiny(dir: &Path) -> (PathBuf, ExperimentConfig) {
    let path = dir.join("tiny.toml");
    let text = format!(
        "data_dir = {:?}\nout_dir = {:?}\n{TINY}",
        dir.join("data"),
        dir.join("out")
    );
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    (path, cfg)
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoshape"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
