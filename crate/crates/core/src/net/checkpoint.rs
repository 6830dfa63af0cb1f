//! Checkpoint files: a versioned header carrying the model config, then
//! named tensors as little-endian floats.
//!
//! Layout:
//! ```text
//! magic   "PLCKPT\0\0"
//! u32     version (1)
//! u32     config JSON length, then the JSON bytes
//! u32     tensor count
//! per tensor:
//!   u16 name length, name bytes
//!   u8  rank, u32 x rank dims
//!   f64 x prod(dims) values
//! ```

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::net::{DetectorParams, ModelConfig};
use crate::seed::fnv1a;

const MAGIC: &[u8; 8] = b"PLCKPT\0\0";
const VERSION: u32 = 1;

pub fn to_bytes(params: &DetectorParams) -> Vec<u8> {
    let layout = params.config.layout();
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(config.len() as u32);
    w.bytes(&config);
    w.u32(layout.slots.len() as u32);
    for slot in &layout.slots {
        w.str(slot.name);
        w.u8(slot.shape.len() as u8);
        for d in &slot.shape {
            w.u32(*d as u32);
        }
        for v in &params.values[slot.range()] {
            w.f64(*v);
        }
    }
    w.buf
}

/// Stable content hash of a parameter set.
pub fn hash(params: &DetectorParams) -> u64 {
    fnv1a(&to_bytes(params))
}

/// Parse a checkpoint. When `expected` is given, the embedded config must
/// match it exactly.
pub fn from_bytes(buf: &[u8], expected: Option<&ModelConfig>) -> Result<DetectorParams> {
    let mut r = Reader::new(buf, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| r.err(e.to_string()))?;
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} ({:?}, base {}), expected {} ({:?}, base {})",
                config.tag(),
                config.class,
                config.base_channels,
                exp.tag(),
                exp.class,
                exp.base_channels
            )));
        }
    }
    config.validate()?;
    let layout = config.layout();
    let count = r.u32()? as usize;
    if count != layout.slots.len() {
        return Err(r.err(format!("expected {} tensors, found {count}", layout.slots.len())));
    }
    let mut values = vec![0.0; layout.total()];
    for slot in &layout.slots {
        let name = r.str()?;
        if name != slot.name {
            return Err(r.err(format!("expected tensor '{}', found '{name}'", slot.name)));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != slot.shape {
            return Err(Error::ShapeMismatch {
                tensor: slot.name.into(),
                expected: slot.shape.clone(),
                actual: shape,
            });
        }
        for v in &mut values[slot.range()] {
            *v = r.f64()?;
        }
    }
    r.finish()?;
    Ok(DetectorParams { config, values })
}

pub fn save(params: &DetectorParams, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<DetectorParams> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, expected)
}
