//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "WSADCKPT"
//! version      u32       currently 1
//! meta_len     u32       byte length of the metadata block
//! meta         bytes     UTF-8 `key=value` lines (config hash, seed, ...)
//! patch        u32
//! n_conv       u32
//!   channels, kernel, stride   3 × u32, repeated n_conv times
//! n_dense      u32
//!   width      u32, repeated n_dense times
//! recurrent    u32       0 = disabled
//! n_params     u64
//! theta        n_params × f64
//! adam_step    u64
//! adam_m       n_params × f64
//! adam_v       n_params × f64
//! ```
//!
//! Floats are stored bit-exactly, so save/load round trips are lossless.

use std::fs;
use std::path::Path;

use super::{AdamState, Architecture, ConvSpec, StudentParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: StudentParams,
    pub adam: AdamState,
    /// Free-form `key=value` lines.
    pub meta: String,
}

impl Checkpoint {
    pub fn new(params: StudentParams, adam: AdamState, meta: impl Into<String>) -> Self {
        Self {
            params,
            adam,
            meta: meta.into(),
        }
    }

    /// Fresh optimizer state for `params`.
    pub fn fresh(params: StudentParams, meta: impl Into<String>) -> Self {
        let adam = AdamState::new(params.len());
        Self::new(params, adam, meta)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.params.architecture();
        let n = self.params.len();
        let mut out = Vec::with_capacity(64 + self.meta.len() + n * 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.meta.len() as u32);
        out.extend_from_slice(self.meta.as_bytes());
        put_u32(&mut out, arch.patch as u32);
        put_u32(&mut out, arch.conv.len() as u32);
        for c in &arch.conv {
            put_u32(&mut out, c.channels as u32);
            put_u32(&mut out, c.kernel as u32);
            put_u32(&mut out, c.stride as u32);
        }
        put_u32(&mut out, arch.dense.len() as u32);
        for &d in &arch.dense {
            put_u32(&mut out, d as u32);
        }
        put_u32(&mut out, arch.recurrent as u32);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        put_f64s(&mut out, self.params.theta());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let patch = r.u32()? as usize;
        let n_conv = r.u32()? as usize;
        let conv = (0..n_conv)
            .map(|_| {
                Ok(ConvSpec {
                    channels: r.u32()? as usize,
                    kernel: r.u32()? as usize,
                    stride: r.u32()? as usize,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_dense = r.u32()? as usize;
        let dense = (0..n_dense)
            .map(|_| Ok(r.u32()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let recurrent = r.u32()? as usize;
        let n = r.u64()? as usize;
        let theta = r.f64s(n)?;
        let step = r.u64()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let arch = Architecture {
            patch,
            conv,
            dense,
            recurrent,
        };
        let params = StudentParams::from_theta(arch, theta)?;
        Ok(Self {
            params,
            adam: AdamState { step, m, v },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
