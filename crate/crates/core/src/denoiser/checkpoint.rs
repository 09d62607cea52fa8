//! `DNZ1` checkpoint files.
//!
//! Layout (little-endian): magic `DNZ1`, `u32` config-JSON length, the JSON,
//! `u64` step counter, then every parameter as `f32` in layout order. An
//! optional trailer (`ADM1`, then the Adam first and second moments as
//! `f32`) makes resumed training bit-identical to an uninterrupted run.

use std::fs;
use std::path::{Path, PathBuf};

use super::{param_count, DenoiserConfig, DenoiserParams, OptimizerState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNZ1";
const ADAM_MAGIC: &[u8; 4] = b"ADM1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams<f32>,
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
}

pub fn save_checkpoint(path: &Path, params: &DenoiserParams<f32>, step: u64, optimizer: Option<&OptimizerState>) -> Result<()> {
    let json = serde_json::to_vec(&params.config).expect("config serializes");
    let extra = optimizer.map_or(0, |o| 4 + 8 * o.m.len());
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * params.data.len() + extra);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&step.to_le_bytes());
    push_f32s(&mut buf, &params.data);
    if let Some(o) = optimizer {
        if o.m.len() != params.data.len() || o.v.len() != params.data.len() {
            return Err(Error::shape(&[params.data.len()], &[o.m.len(), o.v.len()]));
        }
        buf.extend_from_slice(ADAM_MAGIC);
        push_f32s(&mut buf, &o.m);
        push_f32s(&mut buf, &o.v);
    }
    // Write-then-rename so readers never observe a partial checkpoint.
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn push_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::ModelMissing(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let config: DenoiserConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::format(path, format!("bad config json: {e}")))?;
    config.validate()?;
    let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let n = param_count(&config);
    let data = r.f32s(n)?;
    let optimizer = if r.pos == bytes.len() {
        None
    } else {
        if r.take(4)? != ADAM_MAGIC {
            return Err(Error::format(path, "unexpected trailing data"));
        }
        let m = r.f32s(n)?;
        let v = r.f32s(n)?;
        Some(OptimizerState { m, v, step })
    };
    if r.pos != bytes.len() {
        return Err(Error::format(path, "unexpected trailing data"));
    }
    Ok(Checkpoint { params: DenoiserParams { config, data }, step, optimizer })
}
