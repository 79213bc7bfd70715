//! Binary checkpoint files.
//!
//! Layout (all integers little-endian unless noted):
//!
//! ```text
//! magic   b"GSHD"
//! version u32
//! step    u64
//! rng     u64 length + state bytes
//! then per-parameter records until EOF:
//!   name  u64 length + UTF-8 bytes
//!   rank  u64
//!   dims  rank x u64
//!   data  product(dims) x f64 (LE bits)
//! ```
//!
//! Save/load round-trips are bitwise exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GSHD";
const VERSION: u32 = 1;

/// Named parameter snapshot of one or more networks at a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub rng_state: Vec<u8>,
    /// Name -> tensor records in file order. Names are unique.
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(step: u64, rng_state: Vec<u8>, params: Vec<(String, Tensor)>) -> Self {
        Self {
            version: VERSION,
            step,
            rng_state,
            params,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Parameters whose name starts with `prefix.`, with the prefix stripped.
    pub fn params_with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let full = format!("{prefix}.");
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(&full))
            .map(|(n, t)| (n[full.len()..].to_string(), t.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.rng_state.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.rng_state);
        for (name, tensor) in &self.params {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&tensor.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let step = r.u64()?;
        let rng_len = r.u64()? as usize;
        let rng_state = r.take(rng_len)?.to_vec();
        let mut params = Vec::new();
        while !r.done() {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?;
            let rank = r.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let mut data = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            if params.iter().any(|(existing, _)| *existing == name) {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
            params.push((name, tensor));
        }
        Ok(Self {
            version,
            step,
            rng_state,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or_else(|| {
            Error::Checkpoint("length overflow".into())
        })?;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: need {end} bytes, have {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}
