//! Binary checkpoint: `"RFCK"`, `u32` version, `u64` step, `u32` entry count,
//! then per entry `u32` name length, name, `u32` rank, `u64` dims, the values,
//! both moment arrays (all `f64`) and the `u64` moment step. The config text
//! follows as `u32` length plus UTF-8. Everything is little-endian.

use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{Param, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub params: ParamStore,
    pub config_text: String,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    for p in ck.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let [r, c] = p.value().shape();
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(r as u64).to_le_bytes());
        out.extend_from_slice(&(c as u64).to_le_bytes());
        put_tensor(&mut out, p.value());
        put_tensor(&mut out, &p.first_moment);
        put_tensor(&mut out, &p.second_moment);
        out.extend_from_slice(&p.step.to_le_bytes());
    }
    out.extend_from_slice(&(ck.config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(ck.config_text.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("array too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        r.pos = 0;
        return Err(r.err("bad magic (expected RFCK)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!(
            "{}: format version {version}, this build reads {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let step = r.u64()?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string("parameter name")?;
        let rank = r.u32()?;
        if rank != 2 {
            return Err(r.err(format!("parameter {name}: rank {rank}, expected 2")));
        }
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| r.err(format!("parameter {name}: dims overflow")))?;
        let value = Tensor::from_vec(rows, cols, r.f64s(n)?)?;
        let first_moment = Tensor::from_vec(rows, cols, r.f64s(n)?)?;
        let second_moment = Tensor::from_vec(rows, cols, r.f64s(n)?)?;
        let moment_step = r.u64()?;
        params.insert_entry(Param {
            name,
            value: Arc::new(value),
            grad: Tensor::zeros(rows, cols),
            first_moment,
            second_moment,
            step: moment_step,
        })?;
    }
    let config_text = r.string("config text")?;
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        step,
        params,
        config_text,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
