use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{build, ForecastModel, ModelConfig};
use crate::data::{Normalizer, WindowSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: String,
    config: ModelConfig,
    window: WindowSpec,
    seed: u64,
    params: Vec<ParamEntry>,
    normalizer: Option<Normalizer>,
    meta: BTreeMap<String, serde_json::Value>,
}

/// A trained model with the statistics needed to read its outputs.
///
/// Layout: magic `LBCK`, format version (u32 LE), header length (u64 LE),
/// JSON header, then every parameter as f64 LE in header order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ForecastModel,
    pub normalizer: Option<Normalizer>,
    /// Free-form run information such as the learning rate.
    pub meta: BTreeMap<String, serde_json::Value>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: ForecastModel, normalizer: Option<Normalizer>) -> Self {
        Checkpoint { model, normalizer, meta: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let header = Header {
            arch: m.arch().to_string(),
            config: m.config.clone(),
            window: m.window,
            seed: m.seed,
            params: m.params.iter().map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect(),
            normalizer: self.normalizer.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * m.num_parameters());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in m.params.iter() {
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
        let mut model = build(&header.config, header.window, header.seed)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect();
        let stored: Vec<(String, Vec<usize>)> = header.params.into_iter().map(|p| (p.name, p.shape)).collect();
        if expected != stored {
            return Err(corrupt("parameter layout does not match the stored configuration"));
        }
        let payload = &body[hlen..];
        if payload.len() != 8 * model.num_parameters() {
            return Err(corrupt(format!("payload has {} bytes, expected {}", payload.len(), 8 * model.num_parameters())));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
        for (id, (_, shape)) in ids.into_iter().zip(&expected) {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            model.params.set(id, ArrayD::from_shape_vec(IxDyn(shape), data).expect("sized above"));
        }
        Ok(Checkpoint { model, normalizer: header.normalizer, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
