//! Binary head checkpoints.
//!
//! Layout: magic "D3CK", u16 version, head kind byte, pair mode byte,
//! u32 embedding dim, then each tensor in its fixed order as a u32 element
//! count plus little-endian f32 values, then a u32-length-prefixed JSON
//! metadata blob. Parameters live as f64 in memory and are stored as f32.

use super::model::{HeadError, HeadKind, HeadModel, PairMode};
use super::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"D3CK";
const VERSION: u16 = 1;
const MAX_META_LEN: u32 = 16 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {0} is newer than this build understands")]
    UnsupportedVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub config_hash: String,
    pub code_version: String,
}

pub fn save_checkpoint(
    path: &Path,
    model: &HeadModel,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[model.kind().code(), model.pair_mode().code()])?;
    w.write_all(&(model.dim() as u32).to_le_bytes())?;
    for tensor in model.tensors() {
        w.write_all(&(tensor.len() as u32).to_le_bytes())?;
        for &v in tensor {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata encode: {e}")))?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    w.write_all(&meta_json)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(HeadModel, CheckpointMeta), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(&mut r)?;
    if version > VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut codes = [0u8; 2];
    r.read_exact(&mut codes)?;
    let kind = HeadKind::from_code(codes[0])
        .ok_or_else(|| CheckpointError::Corrupt(format!("unknown head kind {}", codes[0])))?;
    let pair_mode = PairMode::from_code(codes[1])
        .ok_or_else(|| CheckpointError::Corrupt(format!("unknown pair mode {}", codes[1])))?;
    let dim = read_u32(&mut r)? as usize;
    let mut model = HeadModel::new(kind, pair_mode, dim, 0)?;
    for tensor in model.tensors_mut() {
        let n = read_u32(&mut r)? as usize;
        if n != tensor.len() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor length {n} does not match expected {}",
                tensor.len()
            )));
        }
        let mut buf = [0u8; 4];
        for v in tensor.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from(f32::from_le_bytes(buf));
        }
    }
    let meta_len = read_u32(&mut r)?;
    if meta_len > MAX_META_LEN {
        return Err(CheckpointError::Corrupt(format!("metadata length {meta_len} too large")));
    }
    let mut meta_json = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_json)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata decode: {e}")))?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes after metadata".into()));
    }
    Ok((model, meta))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, std::io::Error> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
