//! Binary checkpoint container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "LODE"  u32 version
//! u32 len, TOML text { epoch, [model], [train] }
//! u64 adam.t, f64 lr, f64 beta1, f64 beta2, f64 eps
//! 3 × tensor group (parameters, Adam m, Adam v):
//!     u32 count, then per tensor: u32 name len, name, u32 rank, u64 dims…, f64 values…
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, ModelConfig, TrainConfig};
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LODE";

/// Everything needed to continue a run. The per-epoch generator is derived
/// from `train.seed` and `epoch`, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamSet,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    epoch: usize,
    model: ModelConfig,
    train: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_group(out: &mut Vec<u8>, set: &ParamSet) {
    put_u32(out, set.len() as u32);
    for (name, t) in set.iter() {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.rank() as u32);
        for &d in t.shape() {
            put_u64(out, d as u64);
        }
        for &v in t.data() {
            put_f64(out, v);
        }
    }
}

pub(crate) fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        epoch: ckpt.epoch,
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    put_u64(&mut out, ckpt.adam.t);
    for v in [ckpt.adam.lr, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps] {
        put_f64(&mut out, v);
    }
    put_group(&mut out, &ckpt.params);
    put_group(&mut out, &ckpt.adam.m);
    put_group(&mut out, &ckpt.adam.v);
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::MalformedCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn group(&mut self) -> Result<ParamSet> {
        let count = self.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::MalformedCheckpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            if numel > (self.buf.len() - self.pos) / 8 {
                return Err(Error::MalformedCheckpoint(format!("tensor `{name}` larger than the file")));
            }
            let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<f64>>>()?;
            set.insert(name, Tensor::new(shape, data)?)
                .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        }
        Ok(set)
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::MalformedCheckpoint("missing LODE header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::MalformedCheckpoint("config is not UTF-8".into()))?;
    let meta: Meta = toml::from_str(text).map_err(|e| Error::MalformedCheckpoint(format!("config: {e}")))?;
    let t = r.u64()?;
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let params = r.group()?;
    let m = r.group()?;
    let v = r.group()?;
    if r.pos != body.len() {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    params.check_aligned(&m)?;
    params.check_aligned(&v)?;
    Ok(Checkpoint {
        model: meta.model,
        train: meta.train,
        params,
        adam: Adam {
            lr,
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        },
        epoch: meta.epoch,
    })
}

/// Writes atomically: the file is written next to `path` and renamed into place.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode(&bytes)
}
