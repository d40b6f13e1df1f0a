//! Model checkpoints: `model.json` holding architecture hyperparameters and a
//! manifest of named parameter shapes, plus `params.bin` with the raw
//! little-endian f64 values in manifest order.

use crate::error::{Error, Result};
use crate::tensor::{from_le_bytes, to_le_bytes, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    hyper: serde_json::Value,
    parameters: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(
    dir: &Path,
    kind: &str,
    hyper: &impl Serialize,
    params: &[(String, Tensor)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        hyper: serde_json::to_value(hyper)?,
        parameters: params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    fs::write(dir.join("model.json"), serde_json::to_vec_pretty(&manifest)?)?;
    let mut bytes = Vec::new();
    for (_, t) in params {
        bytes.extend_from_slice(&to_le_bytes(t.data()));
    }
    fs::write(dir.join("params.bin"), bytes)?;
    Ok(())
}

pub struct Checkpoint {
    pub kind: String,
    pub hyper: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("model.json"))?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::FormatVersion {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let bin_path = dir.join("params.bin");
    let bytes = fs::read(&bin_path)?;
    let total: usize = manifest
        .parameters
        .iter()
        .map(|p| p.shape.iter().product::<usize>().max(1))
        .sum();
    if bytes.len() != total * 8 {
        return Err(Error::Truncated {
            path: bin_path.display().to_string(),
            expected: total * 8,
            found: bytes.len(),
        });
    }
    let values = from_le_bytes(&bytes);
    let mut params = Vec::with_capacity(manifest.parameters.len());
    let mut offset = 0;
    for entry in &manifest.parameters {
        let n = entry.shape.iter().product::<usize>().max(1);
        params.push((
            entry.name.clone(),
            Tensor::from_vec(&entry.shape, values[offset..offset + n].to_vec()),
        ));
        offset += n;
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        hyper: manifest.hyper,
        params,
    })
}
