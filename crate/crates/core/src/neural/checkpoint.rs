//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"SSQCKPT\0"
//! version u32
//! config  u32 length + JSON bytes
//! entries u32 count, then per entry: u16 name length, name bytes,
//!         u8 rank, rank × u32 dims
//! values  u64 count + count × f64
//! ```

use std::io::{Read, Write};

use super::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSQCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(params.config())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(params.manifest().len() as u32).to_le_bytes())?;
    for e in params.manifest() {
        w.write_all(&(e.name.len() as u16).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&[e.shape.len() as u8])?;
        for d in &e.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::SchemaVersion { expected: VERSION, found: version });
    }
    let n = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut cfg = vec![0u8; n];
    r.read_exact(&mut cfg)
        .map_err(|e| Error::Checkpoint(format!("truncated config: {e}")))?;
    let config: EncoderConfig = serde_json::from_slice(&cfg)?;
    let expected = ModelParams::zeros(&config)?;

    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    if count != expected.manifest().len() {
        return Err(Error::Checkpoint(format!(
            "manifest has {count} entries, config implies {}",
            expected.manifest().len()
        )));
    }
    for e in expected.manifest() {
        let len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated manifest: {e}")))?;
        let rank = take::<1, _>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut r)?) as usize);
        }
        if name != e.name.as_bytes() || shape != e.shape {
            return Err(Error::Checkpoint(format!(
                "manifest entry `{}` {:?} does not match expected `{}` {:?}",
                String::from_utf8_lossy(&name),
                shape,
                e.name,
                e.shape
            )));
        }
    }
    let nvals = u64::from_le_bytes(take(&mut r)?) as usize;
    if nvals != expected.len() {
        return Err(Error::DimensionMismatch { expected: expected.len(), got: nvals });
    }
    let mut values = Vec::with_capacity(nvals);
    for _ in 0..nvals {
        values.push(f64::from_le_bytes(take(&mut r)?));
    }
    ModelParams::from_parts(config, values)
}

pub fn save(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<ModelParams> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
