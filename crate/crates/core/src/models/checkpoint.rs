//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "DCOHCKPT"
//! u32       format version (1)
//! u64       header length in bytes
//! header    UTF-8 JSON (kind, config, vocabularies, manifest, tensor directory,
//!           payload length, payload SHA-256)
//! payload   concatenated f32 tensors in directory order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::linear::{LinearConfig, LinearModel, LinearRankerParams};
use super::neural::{channel_sizes, NeuralConfig, NeuralModel, ScorerParams, TrainingManifest};
use super::CoherenceModel;
use crate::corpus::Vocabularies;
use crate::linearizer::EncodingConfig;

pub const MAGIC: &[u8; 8] = b"DCOHCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements from the payload start.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeaderModel {
    Neural {
        config: NeuralConfig,
        encoding: EncodingConfig,
    },
    Linear {
        config: LinearConfig,
        vocabularies: Vocabularies,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(flatten)]
    pub model: HeaderModel,
    pub manifest: Option<TrainingManifest>,
    pub tensors: Vec<TensorEntry>,
    pub payload_len: usize,
    pub payload_sha256: String,
}

/// A model plus the optional training manifest it was saved with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: CoherenceModel,
    pub manifest: Option<TrainingManifest>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tensors_of(model: &CoherenceModel) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    match model {
        CoherenceModel::Neural(m) => m
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec()))
            .collect(),
        CoherenceModel::Linear(m) => vec![(
            "weights".into(),
            vec![m.params.weights.len()],
            m.params.weights.clone(),
        )],
    }
}

pub fn to_bytes(ckpt: &ModelCheckpoint) -> Result<Vec<u8>, CheckpointError> {
    let mut payload = Vec::new();
    let mut dir = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in tensors_of(&ckpt.model) {
        for x in &data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        dir.push(TensorEntry {
            name,
            shape,
            offset,
            len: data.len(),
        });
        offset += data.len();
    }
    let model = match &ckpt.model {
        CoherenceModel::Neural(m) => HeaderModel::Neural {
            config: m.config.clone(),
            encoding: m.encoding.clone(),
        },
        CoherenceModel::Linear(m) => HeaderModel::Linear {
            config: m.config,
            vocabularies: m.vocabularies.clone(),
        },
    };
    let header = Header {
        model,
        manifest: ckpt.manifest.clone(),
        tensors: dir,
        payload_len: payload.len(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let hbytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + hbytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(hbytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&hbytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8]), CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 20 {
        return Err(CheckpointError::Corrupt("truncated preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[20..];
    if rest.len() < hlen {
        return Err(CheckpointError::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let payload = &rest[hlen..];
    if payload.len() != header.payload_len {
        return Err(CheckpointError::Corrupt(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_len
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(CheckpointError::Corrupt("payload checksum mismatch".into()));
    }
    Ok((header, payload))
}

fn tensor_data(payload: &[u8], e: &TensorEntry) -> Result<Vec<f32>, CheckpointError> {
    let start = e.offset * 4;
    let end = start + e.len * 4;
    if end > payload.len() || e.shape.iter().product::<usize>() != e.len {
        return Err(CheckpointError::Corrupt(format!("tensor `{}` out of range", e.name)));
    }
    Ok(payload[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint, CheckpointError> {
    let (header, payload) = read_header(bytes)?;
    let model = match header.model {
        HeaderModel::Neural { config, encoding } => {
            let sizes = channel_sizes(&encoding);
            let mut params = ScorerParams::<f32>::zeros(&config, &sizes);
            let expected: Vec<(String, Vec<usize>)> = params
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.shape().to_vec()))
                .collect();
            if expected.len() != header.tensors.len() {
                return Err(CheckpointError::Corrupt("tensor directory does not match config".into()));
            }
            for ((t, (name, shape)), e) in params.tensors_mut().into_iter().zip(&expected).zip(&header.tensors) {
                if &e.name != name || &e.shape != shape {
                    return Err(CheckpointError::Corrupt(format!("unexpected tensor `{}`", e.name)));
                }
                t.data_mut().copy_from_slice(&tensor_data(payload, e)?);
            }
            CoherenceModel::Neural(NeuralModel {
                config,
                encoding,
                params,
            })
        }
        HeaderModel::Linear { config, vocabularies } => {
            let [e] = header.tensors.as_slice() else {
                return Err(CheckpointError::Corrupt("linear model needs one tensor".into()));
            };
            let dim = config.features.dim(config.transition.k, &vocabularies.das);
            if e.name != "weights" || e.len != dim {
                return Err(CheckpointError::Corrupt("weight vector does not match config".into()));
            }
            CoherenceModel::Linear(LinearModel {
                config,
                vocabularies,
                params: LinearRankerParams {
                    weights: tensor_data(payload, e)?,
                },
            })
        }
    };
    Ok(ModelCheckpoint {
        model,
        manifest: header.manifest,
    })
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
