//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        b"XTFM"
//! version      u32 (= 1)
//! config       vocab_size u64, d_model u64, n_layers u64, n_heads u64,
//!              d_ff u64, max_seq u64, seed u64, tied u8
//! count        u32, number of tensors
//! per tensor   name_len u32, name (UTF-8), rank u32, dims u64 × rank,
//!              payload f64 × product(dims)
//! ```
//!
//! Tensors appear in the canonical order of [`ModelParams::names`].

use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Result, XtfError};
use crate::io::write_atomic;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"XTFM";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.push(c.tied as u8);
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(XtfError::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| XtfError::Format("size overflow".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(XtfError::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(XtfError::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig {
        vocab_size: r.usize()?,
        d_model: r.usize()?,
        n_layers: r.usize()?,
        n_heads: r.usize()?,
        d_ff: r.usize()?,
        max_seq: r.usize()?,
        seed: r.u64()?,
        tied: match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(XtfError::Format(format!("bad tied flag {b}"))),
        },
    };
    config.validate()?;
    let expected = ModelParams::names_for(&config);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(XtfError::Format(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for want in &expected {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| XtfError::Format("tensor name not UTF-8".into()))?;
        if name != want {
            return Err(XtfError::Format(format!("expected tensor {want}, found {name}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(dims, data)?);
    }
    if r.pos != buf.len() {
        return Err(XtfError::Format("trailing bytes after checkpoint".into()));
    }
    ModelParams::from_parts(config, tensors)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &to_bytes(params))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| XtfError::io(path, e))?;
    from_bytes(&bytes)
}
