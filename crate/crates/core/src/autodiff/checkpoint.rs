//! Model checkpoints: a JSON descriptor of the architecture hyperparameters
//! followed by named parameter tensors as little-endian f64.
//!
//! Layout: magic "EEGCKPT1", u32 descriptor length, descriptor JSON, then for
//! each tensor in descriptor order the raw f64 data.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

const MAGIC: &[u8; 8] = b"EEGCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Descriptor {
    architecture: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn save(
    architecture: &serde_json::Value,
    tensors: &[(String, &Tensor)],
    path: &Path,
) -> Result<(), CheckpointError> {
    let descriptor = Descriptor {
        architecture: architecture.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorInfo {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>), CheckpointError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let mut lenbuf = [0u8; 4];
    r.read_exact(&mut lenbuf)?;
    let json_len = u32::from_le_bytes(lenbuf) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let descriptor: Descriptor = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(descriptor.tensors.len());
    let mut f64buf = [0u8; 8];
    for info in descriptor.tensors {
        let n: usize = info.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        tensors.push((info.name, Tensor::from_vec(&info.shape, data)));
    }
    Ok((descriptor.architecture, tensors))
}
