//! Prototype-aware point cloud completion at desk scale.

pub mod completion;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod pretext;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
