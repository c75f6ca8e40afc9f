//! Checkpoint container: a magic line with the format version, a JSON
//! header line, then every parameter as little-endian `f64` values in
//! header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::RunConfig;
use crate::eval::GateTrace;
use crate::tensor::{DenseMatrix, ParamStore, RngState};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "SELFGATE-CHECKPOINT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: String },
    #[error("not a checkpoint file")]
    Magic,
    #[error("checkpoint checksum mismatch: {0}")]
    Checksum(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    config: RunConfig,
    epoch: usize,
    best_metric: f64,
    rng: Vec<RngState>,
    gate_trace: Option<GateTrace>,
    /// SHA-256 of the payload, hex encoded.
    checksum: String,
}

/// Trained parameters with the metadata needed to rebuild and audit a
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamStore,
    /// Epoch (1-based) the parameters were taken from.
    pub epoch: usize,
    pub best_metric: f64,
    pub rng: Vec<RngState>,
    pub gate_trace: Option<GateTrace>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.params.total_len() * 8);
        let mut tensors = Vec::with_capacity(self.params.len());
        for (_, name, value) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rows: value.rows(),
                cols: value.cols(),
            });
            for x in value.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = Header {
            tensors,
            config: self.config.clone(),
            epoch: self.epoch,
            best_metric: self.best_metric,
            rng: self.rng.clone(),
            gate_trace: self.gate_trace.clone(),
            checksum: hex::encode(Sha256::digest(&payload)),
        };
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n").into_bytes();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (magic, rest) = split_line(bytes).ok_or(CheckpointError::Magic)?;
        let magic = std::str::from_utf8(magic).map_err(|_| CheckpointError::Magic)?;
        let version = magic.strip_prefix(MAGIC).ok_or(CheckpointError::Magic)?.trim();
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(CheckpointError::Version {
                found: version.to_string(),
            });
        }
        let (header, payload) =
            split_line(rest).ok_or_else(|| CheckpointError::Checksum("file truncated inside header".into()))?;
        let header: Header = serde_json::from_slice(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
        if payload.len() != expected {
            return Err(CheckpointError::Checksum(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.checksum {
            return Err(CheckpointError::Checksum("payload digest differs".into()));
        }
        let mut params = ParamStore::new();
        let mut chunks = payload.chunks_exact(8);
        for t in &header.tensors {
            let data = chunks
                .by_ref()
                .take(t.rows * t.cols)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let value = DenseMatrix::from_vec(t.rows, t.cols, data).map_err(|e| CheckpointError::Header(e.to_string()))?;
            params.add(t.name.clone(), value);
        }
        Ok(Self {
            config: header.config,
            params,
            epoch: header.epoch,
            best_metric: header.best_metric,
            rng: header.rng,
            gate_trace: header.gate_trace,
        })
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
