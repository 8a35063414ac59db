//! `PCF1` point cloud files: magic, little-endian `u32` count, then
//! `N x 3` little-endian `f32` coordinates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::PointCloud;

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";

pub fn encode_pcf(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + cloud.len() * 12);
    buf.extend_from_slice(PCF_MAGIC);
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for c in p {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_pcf(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 || &bytes[..4] != PCF_MAGIC {
        return Err(bad("missing PCF1 magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let expected = 8 + n * 12;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {n} points, found {}",
            bytes.len()
        )));
    }
    let coords: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(PointCloud::new(
        coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    ))
}

pub fn write_pcf(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_pcf(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_pcf(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pcf(&bytes, path)
}
