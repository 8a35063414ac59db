//! `PSCK` checkpoints: little-endian binary with named `f64` tensors and
//! optional Adam moments.
//!
//! Layout: magic, `u32` version, kind string, config-hash string, `u64`
//! epoch, `u32` tensor count, then per tensor its name, `u32` rank,
//! `u64` dims and raw values; finally a flag byte and, if set, the Adam
//! step and per-tensor first and second moments. Strings are a `u32`
//! byte length followed by UTF-8.

use std::path::Path;

use protoshape_core::tensor::{AdamState, ParamSet, Tensor};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"PSCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_params(kind: &str, config_hash: &str, epoch: u64, params: &ParamSet, adam: Option<&AdamState>) -> Self {
        Self {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            epoch,
            tensors: params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            adam: adam.cloned(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut b, &self.kind);
        put_str(&mut b, &self.config_hash);
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut b, name);
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                b.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut b, t.data());
        }
        match &self.adam {
            None => b.push(0),
            Some(a) => {
                b.push(1);
                b.extend_from_slice(&a.step.to_le_bytes());
                b.extend_from_slice(&(a.m.len() as u32).to_le_bytes());
                for (m, v) in a.m.iter().zip(&a.v) {
                    b.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    put_f64s(&mut b, m);
                    put_f64s(&mut b, v);
                }
            }
        }
        b
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.bad("missing PSCK magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(&format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let config_hash = r.string()?;
        let epoch = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product::<usize>();
            let data = r.f64s(n)?;
            let t = Tensor::new(shape, data).map_err(|e| r.bad(&e.to_string()))?;
            tensors.push((name, t));
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let k = r.u32()? as usize;
                let mut m = Vec::with_capacity(k.min(1 << 16));
                let mut v = Vec::with_capacity(k.min(1 << 16));
                for _ in 0..k {
                    let n = r.u64()? as usize;
                    m.push(r.f64s(n)?);
                    v.push(r.f64s(n)?);
                }
                Some(AdamState { step, m, v })
            }
            f => return Err(r.bad(&format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(Self {
            kind,
            config_hash,
            epoch,
            tensors,
            adam,
        })
    }

    /// Writes the checkpoint, creating parent directories.
    pub fn save_to(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Loads and checks kind and config hash.
    pub fn load_expecting(path: &Path, kind: &str, config_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(HarnessError::Config(format!(
                "{} holds a {} checkpoint, expected {kind}",
                path.display(),
                ck.kind
            )));
        }
        if ck.config_hash != config_hash {
            return Err(HarnessError::Config(format!(
                "{} was written under a different configuration ({} vs {config_hash})",
                path.display(),
                ck.config_hash
            )));
        }
        Ok(ck)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

fn put_f64s(b: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: &str) -> HarnessError {
        HarnessError::io(self.path, format!("malformed checkpoint: {detail}"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.bad("string is not UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.bad("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
