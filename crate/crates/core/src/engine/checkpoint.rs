use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DiscoveryModel, HyperParams};
use crate::error::{DselError, Result};

const MAGIC: &[u8; 4] = b"DSMD";

#[derive(Serialize, Deserialize)]
struct Trailer {
    hyper: HyperParams,
    n_labeled_categories: usize,
    adapter: Option<Vec<Vec<f64>>>,
}

/// Writes "DSMD", u32 K, u32 dim, K×dim f32 prototypes, u32 trailer length, JSON trailer.
pub fn save_checkpoint(model: &DiscoveryModel, path: &Path) -> Result<()> {
    let (k, dim) = model.prototypes.dim();
    let mut buf = Vec::with_capacity(12 + k * dim * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in model.prototypes.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let trailer = Trailer {
        hyper: model.hyper,
        n_labeled_categories: model.n_labeled_categories,
        adapter: model
            .adapter
            .as_ref()
            .map(|a| a.outer_iter().map(|r| r.to_vec()).collect()),
    };
    let json = serde_json::to_vec(&trailer)?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    fs::write(path, buf).map_err(|e| DselError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<DiscoveryModel> {
    let bytes = fs::read(path).map_err(|e| DselError::io(path, e))?;
    let bad = |m: &str| DselError::MalformedHeader(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing DSMD magic"));
    }
    let u32_at = |at: usize| -> Result<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated checkpoint"))
    };
    let k = u32_at(4)?;
    let dim = u32_at(8)?;
    let body_end = 12 + k * dim * 4;
    let json_len = u32_at(body_end)?;
    let json = bytes
        .get(body_end + 4..body_end + 4 + json_len)
        .ok_or_else(|| bad("truncated trailer"))?;
    let protos: Vec<f64> = bytes[12..body_end]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let trailer: Trailer = serde_json::from_slice(json)?;
    let adapter = match trailer.adapter {
        Some(rows) => {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Some(
                Array2::from_shape_vec((rows.len(), dim), flat)
                    .map_err(|_| bad("adapter shape"))?,
            )
        }
        None => None,
    };
    Ok(DiscoveryModel {
        prototypes: Array2::from_shape_vec((k, dim), protos).expect("length from header"),
        adapter,
        hyper: trailer.hyper,
        n_labeled_categories: trailer.n_labeled_categories,
    })
}
