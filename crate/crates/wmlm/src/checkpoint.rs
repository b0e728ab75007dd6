//! Checkpoint container: one JSON header line describing a parameter
//! manifest, followed by the raw payload of little-endian f32 values
//! concatenated in manifest order. The manifest must tile the payload
//! exactly, which makes truncation and overlap detectable before any
//! parameter is touched.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::optim::ParamSet;
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const CKPT_FORMAT: &str = "wmlm-ckpt-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Stage1,
    Stage2,
    Rnn,
}

impl std::fmt::Display for StageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StageTag::Stage1 => "stage1",
            StageTag::Stage2 => "stage2",
            StageTag::Rnn => "rnn",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
    /// Element count; must equal the shape product.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config_digest: String,
    pub stage: StageTag,
    pub seed: u64,
    pub tool_version: String,
    pub manifest: Vec<ManifestEntry>,
    /// Full run configuration; absent in minimal foreign checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    /// Final metrics of the producing run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f32>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_params(
        stage: StageTag,
        params: &ParamSet<f32>,
        config: &RunConfig,
        seed: u64,
        metrics: Option<serde_json::Value>,
    ) -> Result<Checkpoint> {
        let mut manifest = Vec::with_capacity(params.len());
        let mut payload = Vec::with_capacity(params.num_elements());
        let mut offset = 0usize;
        for (name, tensor) in params.iter() {
            let len = tensor.len();
            manifest.push(ManifestEntry {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                offset,
                len,
            });
            payload.extend(tensor.to_vec());
            offset += len;
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                format: CKPT_FORMAT.to_string(),
                config_digest: config.digest()?,
                stage,
                seed,
                tool_version: crate::config::TOOL_VERSION.to_string(),
                manifest,
                config: Some(config.clone()),
                metrics,
            },
            payload,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.header.format != CKPT_FORMAT {
            return Err(ckpt_err(format!(
                "unsupported checkpoint format {:?} (expected {CKPT_FORMAT:?})",
                self.header.format
            )));
        }
        let mut offset = 0usize;
        for e in &self.header.manifest {
            let product: usize = e.shape.iter().product();
            if product != e.len {
                return Err(ckpt_err(format!(
                    "manifest entry {:?}: shape {:?} does not match len {}",
                    e.name, e.shape, e.len
                )));
            }
            if e.offset != offset {
                return Err(ckpt_err(format!(
                    "manifest entry {:?}: offset {} leaves a gap or overlap (expected {offset})",
                    e.name, e.offset
                )));
            }
            offset += e.len;
        }
        if offset != self.payload.len() {
            return Err(ckpt_err(format!(
                "manifest covers {offset} elements but payload holds {}",
                self.payload.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = serde_json::to_string(&self.header)
            .map_err(|e| ckpt_err(format!("header serialization: {e}")))?;
        let mut bytes = Vec::with_capacity(header.len() + 1 + self.payload.len() * 4);
        bytes.extend_from_slice(header.as_bytes());
        bytes.push(b'\n');
        for v in &self.payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ckpt_err("missing header line"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| ckpt_err(format!("header parse: {e}")))?;
        let body = &bytes[nl + 1..];
        let total: usize = header.manifest.iter().map(|e| e.len).sum();
        if body.len() != total * 4 {
            return Err(ckpt_err(format!(
                "payload is {} bytes but manifest requires {}",
                body.len(),
                total * 4
            )));
        }
        let payload: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ckpt = Checkpoint { header, payload };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.header.manifest.iter().find(|e| e.name == name).map(|e| {
            (e.shape.as_slice(), &self.payload[e.offset..e.offset + e.len])
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.header.manifest.iter().map(|e| e.name.as_str())
    }

    /// Copy stored values into every parameter of `target` by name. Entries
    /// the target does not ask for are ignored; a missing name is a
    /// checkpoint error and a shape clash is a config error (the usual cause
    /// is a d_model mismatch).
    pub fn load_into(&self, target: &ParamSet<f32>) -> Result<()> {
        for (name, tensor) in target.iter() {
            let (shape, data) = self
                .tensor(name)
                .ok_or_else(|| ckpt_err(format!("checkpoint has no parameter {name:?}")))?;
            if shape != tensor.shape() {
                return Err(Error::Config(format!(
                    "parameter {name:?} has shape {:?} in the checkpoint but {:?} in the model",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(data.to_vec())?;
        }
        Ok(())
    }

    /// Digest of the payload bytes; used to prove evaluation never writes.
    pub fn payload_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.payload {
            h.update(v.to_le_bytes());
        }
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Digest of a live parameter set's values, comparable across reads.
pub fn params_digest(params: &ParamSet<f32>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, tensor) in params.iter() {
        h.update(name.as_bytes());
        for v in tensor.to_vec() {
            h.update(v.to_le_bytes());
        }
    }
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
