//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` manifest
//! length, a JSON manifest, then the raw little-endian `f32` blob addressed
//! by the manifest's offset table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::autodiff::{Adam, ParamSet, Tensor};
use crate::data::{LabelMaps, Vocab};
use crate::error::{Error, Result};
use crate::model::{JointModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"XNLUCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A trained (or freshly initialized) model with everything needed to use
/// it again.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub maps: LabelMaps,
    pub vocab: Vocab,
    pub params: ParamSet<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// Per parameter: offsets of the first and second moment.
    moments: Vec<(String, usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    epoch: usize,
    run: RunConfig,
    model: ModelConfig,
    maps: LabelMaps,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
    blob_len: usize,
}

impl Checkpoint {
    pub fn joint_model(&self) -> Result<JointModel> {
        JointModel::new(self.model.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<f32> = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: blob.len(),
                len: t.len(),
            });
            blob.extend_from_slice(t.data());
        }
        let optimizer = self.optimizer.as_ref().map(|opt| {
            let mut moments = Vec::new();
            for (name, (m, v)) in opt.moments() {
                let m_off = blob.len();
                blob.extend_from_slice(m);
                let v_off = blob.len();
                blob.extend_from_slice(v);
                moments.push((name.clone(), m_off, v_off));
            }
            OptimizerEntry {
                step: opt.step_count(),
                lr: opt.config.lr,
                beta1: opt.config.beta1,
                beta2: opt.config.beta2,
                eps: opt.config.eps,
                moments,
            }
        });
        let manifest = Manifest {
            version: FORMAT_VERSION,
            epoch: self.epoch,
            run: self.run.clone(),
            model: self.model.clone(),
            maps: self.maps.clone(),
            vocab: self.vocab.clone(),
            tensors,
            optimizer,
            blob_len: blob.len(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CheckpointCorrupt(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing header"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(corrupt("truncated manifest"));
        }
        let value: serde_json::Value =
            serde_json::from_slice(&body[..mlen]).map_err(|e| corrupt(&format!("manifest: {e}")))?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("manifest has no version"))? as u32;
        if found != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(value).map_err(|e| corrupt(&format!("manifest: {e}")))?;
        let raw = &body[mlen..];
        if raw.len() != 4 * m.blob_len {
            return Err(corrupt(&format!(
                "parameter blob has {} bytes, manifest expects {}",
                raw.len(),
                4 * m.blob_len
            )));
        }
        let blob: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let slice = |off: usize, len: usize| -> Result<Vec<f32>> {
            blob.get(off..off + len)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::CheckpointManifest(format!("range {off}+{len} outside blob")))
        };

        let mut params = ParamSet::new();
        for t in &m.tensors {
            if t.shape.iter().product::<usize>() != t.len {
                return Err(Error::CheckpointManifest(format!(
                    "{}: shape {:?} does not hold {} values",
                    t.name, t.shape, t.len
                )));
            }
            let tensor = Tensor::new(t.shape.clone(), slice(t.offset, t.len)?)
                .map_err(|e| Error::CheckpointManifest(format!("{}: {e}", t.name)))?;
            params
                .insert(t.name.clone(), tensor)
                .map_err(|e| Error::CheckpointManifest(e.to_string()))?;
        }
        let expected: ParamSet<f32> = m.model.init_params(0).map_err(|e| Error::CheckpointManifest(e.to_string()))?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::CheckpointManifest(format!(
                        "{name}: stored shape {:?}, model needs {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::CheckpointManifest(format!("missing parameter {name}"))),
            }
        }
        if params.len() != expected.len() {
            return Err(Error::CheckpointManifest(format!(
                "{} stored parameters, model has {}",
                params.len(),
                expected.len()
            )));
        }
        m.model
            .check_maps(&m.maps)
            .map_err(|e| Error::CheckpointManifest(e.to_string()))?;
        if m.model.encoder.vocab_size != m.vocab.len() {
            return Err(Error::CheckpointManifest(format!(
                "vocabulary has {} words, encoder expects {}",
                m.vocab.len(),
                m.model.encoder.vocab_size
            )));
        }

        let optimizer = match m.optimizer {
            None => None,
            Some(o) => {
                let mut moments = BTreeMap::new();
                for (name, m_off, v_off) in o.moments {
                    let n = params
                        .get(&name)
                        .ok_or_else(|| Error::CheckpointManifest(format!("moments for unknown {name}")))?
                        .len();
                    moments.insert(name, (slice(m_off, n)?, slice(v_off, n)?));
                }
                let cfg = crate::autodiff::AdamConfig {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                };
                Some(Adam::from_state(cfg, o.step, moments))
            }
        };
        Ok(Checkpoint {
            run: m.run,
            model: m.model,
            maps: m.maps,
            vocab: m.vocab,
            params,
            optimizer,
            epoch: m.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
