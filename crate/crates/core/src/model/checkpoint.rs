//! Binary checkpoint container.
//!
//! Layout (little endian): magic, `u32` version, `u64` length + JSON model
//! config, `u64` tensor count, then per tensor: `u64` name length, name
//! bytes, `u64` rank, `u64` dims, raw `f64` data. Floats are stored as their
//! bit patterns, so a save/load round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, Params, PolicyModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPLXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &PolicyModel, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(model.config())?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    let tensors = model.params().tensors();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, shape, data) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, limit: u64, what: &str) -> Result<usize> {
    let n = read_u64(r)?;
    if n > limit {
        return Err(Error::Checkpoint(format!("{what} length {n} is implausible")));
    }
    Ok(n as usize)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PolicyModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = read_len(&mut r, 1 << 20, "config")?;
    let mut cfg = vec![0u8; n];
    r.read_exact(&mut cfg)?;
    let config: ModelConfig = serde_json::from_slice(&cfg)?;
    config.validate()?;

    let mut params = Params::init(&config, &mut crate::rng::seeded(0))?;
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let count = read_len(&mut r, 1 << 20, "tensor count")?;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (slot, (want_name, want_shape)) in params.tensors_mut().into_iter().zip(&expected) {
        let n = read_len(&mut r, 4096, "tensor name")?;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_len(&mut r, 8, "rank")?;
        let shape = (0..rank).map(|_| read_len(&mut r, 1 << 32, "dim")).collect::<Result<Vec<_>>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} {shape:?} does not match expected {want_name} {want_shape:?}"
            )));
        }
        let mut b = [0u8; 8];
        for x in slot.iter_mut() {
            r.read_exact(&mut b)?;
            *x = f64::from_le_bytes(b);
        }
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("checkpoint contains non-finite parameters".into()));
    }
    PolicyModel::from_params(config, params)
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn save_checkpoint(model: &PolicyModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyModel> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
