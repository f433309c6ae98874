//! Checkpoint container: magic, little-endian u64 header length, a JSON
//! header, then every tensor as raw little-endian f64 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{LabError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DSLCKPT\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub tokens_seen: u64,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    step: u64,
    tokens_seen: u64,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tensors = ckpt.params.tensors();
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.data.len() as u64;
            e
        })
        .collect();
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: ckpt.params.config,
        step: ckpt.step,
        tokens_seen: ckpt.tokens_seen,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &tensors {
        for v in t.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LabError::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(LabError::Format("checkpoint header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(LabError::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    header.config.validate()?;
    let mut params = ModelParams::zeros(&header.config);
    let mut expected_offset = 0u64;
    {
        let tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(LabError::Format("tensor count does not match config".into()));
        }
        let mut buf = [0u8; 8];
        for (t, e) in tensors.into_iter().zip(&header.tensors) {
            if t.name != e.name || t.shape != e.shape || e.offset != expected_offset {
                return Err(LabError::Format(format!("unexpected tensor entry {}", e.name)));
            }
            for v in t.data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            expected_offset += t.data.len() as u64;
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(LabError::Format("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint {
        step: header.step,
        tokens_seen: header.tokens_seen,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run/step_10.ckpt");
        let cfg = ModelConfig::new(4, 6, 8, 2, 3, 20, 8);
        let ckpt = Checkpoint {
            step: 10,
            tokens_seen: 1280,
            params: init_model(&cfg, 9).unwrap(),
        };
        write_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let cfg = ModelConfig::new(4, 4, 8, 1, 1, 20, 8);
        let ckpt = Checkpoint { step: 0, tokens_seen: 0, params: init_model(&cfg, 0).unwrap() };
        write_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&path).is_err());
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(LabError::Format(_))));
    }
}
