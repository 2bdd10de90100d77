//! Checkpoint files: parameters, batch-norm buffers, optimizer state and
//! the configuration that produced them.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! offset      size  content
//! 0           4     magic b"EVCK"
//! 4           4     u32 format version (currently 1)
//! 8           8     u64 header length H in bytes
//! 16          H     UTF-8 JSON header
//! 16 + H      ...   payload: f64 values, 8 bytes each
//! ```
//!
//! The JSON header is an object with two keys:
//!
//! - `meta`: network, loss and optimizer configuration, seed and the number
//!   of optimizer steps taken.
//! - `tensors`: an array of `{kind, name, shape, offset, len}` entries where
//!   `kind` is one of `param`, `buffer`, `adam_m`, `adam_v`, `offset` is the
//!   byte offset of the tensor inside the payload and `len` its element
//!   count. Entries appear sorted by kind then name, and their payload
//!   ranges are contiguous in that order.
//!
//! Nothing time- or path-dependent is stored, so the same training run
//! always produces the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use evderain_core::autodiff::Tensor;
use evderain_core::loss_metrics::LossConfig;
use evderain_core::model::{ModelParams, NetworkConfig};
use evderain_core::train::{AdamState, OptimConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub kind: Kind,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: Meta,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Meta,
    pub params: ModelParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn from_trainer(tr: &Trainer) -> Self {
        Checkpoint {
            meta: Meta {
                network: tr.net.clone(),
                loss: tr.loss,
                optim: tr.optim.clone(),
                seed: tr.seed,
                step: tr.adam.step,
            },
            params: tr.params.clone(),
            adam: tr.adam.clone(),
        }
    }

    /// Rebuilds a trainer, keeping the stored parameters and moments.
    pub fn into_trainer(self) -> Result<Trainer> {
        let m = self.meta;
        let mut tr = Trainer::new(m.network, m.loss, m.optim, m.seed)
            .map_err(|e| Error::Mismatch(format!("stored configuration is invalid: {e}")))?;
        self.params
            .check_against(&tr.net)
            .map_err(|e| Error::Mismatch(e.to_string()))?;
        tr.params = self.params;
        tr.adam = self.adam;
        tr.adam.step = m.step;
        Ok(tr)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |kind: Kind, name: &str, shape: &[usize], data: &[f64]| {
            tensors.push(Entry {
                kind,
                name: name.to_string(),
                shape: shape.to_vec(),
                offset: payload.len() as u64,
                len: data.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in &self.params.tensors {
            push(Kind::Param, name, t.shape(), t.data());
        }
        for (name, t) in &self.params.buffers {
            push(Kind::Buffer, name, t.shape(), t.data());
        }
        for (name, m) in &self.adam.m {
            push(Kind::AdamM, name, &[m.len()], m);
        }
        for (name, v) in &self.adam.v {
            push(Kind::AdamV, name, &[v.len()], v);
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors,
        })
        .expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (missing EVCK magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let hend = 16usize
            .checked_add(usize::try_from(hlen).map_err(|_| bad("header length overflows".into()))?)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[hend..];

        let mut params = ModelParams {
            tensors: BTreeMap::new(),
            buffers: BTreeMap::new(),
        };
        let mut adam = AdamState {
            step: header.meta.step,
            ..AdamState::default()
        };
        let mut expected_offset = 0u64;
        for e in header.tensors {
            if e.offset != expected_offset || e.shape.iter().product::<usize>() as u64 != e.len {
                return Err(bad(format!("inconsistent index entry for {}", e.name)));
            }
            let start = e.offset as usize;
            let end = e
                .len
                .checked_mul(8)
                .and_then(|n| n.checked_add(e.offset))
                .filter(|&end| end <= payload.len() as u64)
                .ok_or_else(|| bad(format!("payload too short for {}", e.name)))? as usize;
            expected_offset = end as u64;
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let dup = match e.kind {
                Kind::Param | Kind::Buffer => {
                    let t = Tensor::new(&e.shape, data).map_err(|err| bad(err.to_string()))?;
                    let map = if e.kind == Kind::Param {
                        &mut params.tensors
                    } else {
                        &mut params.buffers
                    };
                    map.insert(e.name.clone(), t).is_some()
                }
                Kind::AdamM => adam.m.insert(e.name.clone(), data).is_some(),
                Kind::AdamV => adam.v.insert(e.name.clone(), data).is_some(),
            };
            if dup {
                return Err(bad(format!("duplicate entry {}", e.name)));
            }
        }
        if expected_offset != payload.len() as u64 {
            return Err(bad("trailing bytes after payload".into()));
        }
        for (name, m) in adam.m.iter().chain(&adam.v) {
            match params.tensors.get(name) {
                Some(t) if t.len() == m.len() => {}
                _ => return Err(bad(format!("optimizer state for unknown or resized parameter {name}"))),
            }
        }
        Ok(Checkpoint {
            meta: header.meta,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            encoder_channels: vec![4, 8],
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut tr = Trainer::new(small(), LossConfig::default(), OptimConfig::default(), 3).unwrap();
        tr.adam.step = 7;
        for (name, t) in &tr.params.tensors {
            tr.adam.m.insert(name.clone(), vec![0.25; t.len()]);
            tr.adam.v.insert(name.clone(), vec![1e-300; t.len()]);
        }
        let ck = Checkpoint::from_trainer(&tr);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let tr2 = back.into_trainer().unwrap();
        assert_eq!(tr2.params, tr.params);
        assert_eq!(tr2.adam, tr.adam);
    }

    #[test]
    fn header_layout() {
        let tr = Trainer::new(small(), LossConfig::default(), OptimConfig::default(), 0).unwrap();
        let bytes = Checkpoint::from_trainer(&tr).to_bytes();
        assert_eq!(&bytes[..4], b"EVCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        let n: u64 = v["tensors"].as_array().unwrap().iter().map(|e| e["len"].as_u64().unwrap()).sum();
        assert_eq!(bytes.len(), 16 + h + 8 * n as usize);
        assert_eq!(n as usize, tr.params.num_scalars() + tr.params.buffers.values().map(Tensor::len).sum::<usize>());
    }

    #[test]
    fn corruption_is_reported() {
        let tr = Trainer::new(small(), LossConfig::default(), OptimConfig::default(), 0).unwrap();
        let bytes = Checkpoint::from_trainer(&tr).to_bytes();
        let p = Path::new("mem");
        assert!(matches!(Checkpoint::from_bytes(p, &bytes[..bytes.len() - 8]), Err(Error::Checkpoint { .. })));
        assert!(matches!(Checkpoint::from_bytes(p, b"nope"), Err(Error::Checkpoint { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(p, &extra), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn shape_mismatch_is_not_corruption() {
        let tr = Trainer::new(small(), LossConfig::default(), OptimConfig::default(), 0).unwrap();
        let mut ck = Checkpoint::from_trainer(&tr);
        ck.meta.network.encoder_channels = vec![4, 16];
        assert!(matches!(ck.into_trainer(), Err(Error::Mismatch(_))));
    }
}
