//! Model checkpoint format: `SLPC` magic, version, JSON-encoded architecture
//! header, then the flat parameter buffer as little-endian 32-bit floats in
//! layer order (conv weights and biases per layer, then fc weights and bias).

use super::{CnnConfig, CnnModel};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SLPC";
const VERSION: u16 = 1;

pub fn save_checkpoint(model: &CnnModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let cfg_json = serde_json::to_vec(model.config())?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    w.write_all(&(model.params().len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.params().len() * 4);
    for &p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CnnModel<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let err = |offset: usize, reason: String| Error::Format {
        offset: offset as u64,
        reason,
    };
    let need = |pos: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(pos..pos + n)
            .ok_or_else(|| err(bytes.len(), format!("truncated checkpoint at offset {pos}")))
    };

    if need(0, 4)? != MAGIC {
        return Err(err(0, "bad checkpoint magic, expected SLPC".into()));
    }
    let version = u16::from_le_bytes(need(4, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(err(4, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = u32::from_le_bytes(need(6, 4)?.try_into().unwrap()) as usize;
    let cfg: CnnConfig = serde_json::from_slice(need(10, cfg_len)?)
        .map_err(|e| err(10, format!("bad architecture header: {e}")))?;
    let mut pos = 10 + cfg_len;
    let n_params = u64::from_le_bytes(need(pos, 8)?.try_into().unwrap()) as usize;
    pos += 8;
    let raw = need(pos, n_params * 4)?;
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    pos += n_params * 4;
    if pos != bytes.len() {
        return Err(err(pos, format!("{} trailing bytes", bytes.len() - pos)));
    }
    CnnModel::from_params(cfg, params)
}
