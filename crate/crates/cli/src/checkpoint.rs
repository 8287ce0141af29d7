//! Checkpoint files: one JSON header line followed by the potential as little-endian f64.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{GridBlock, RunConfig};

pub const FORMAT: &str = "cone-ke-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint format version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint payload checksum mismatch")]
    Checksum,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    /// Index of the epsilon in the configured ladder.
    pub cell: usize,
    pub eps: f64,
    /// Index into the stage list of the run.
    pub stage: usize,
    pub stage_name: String,
    pub t: f64,
    pub next_dt: f64,
    pub angles: Vec<f64>,
    pub grid: GridBlock,
    pub n: usize,
    pub sha256: String,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub values: Vec<f64>,
}

fn digest(payload: &[u8]) -> String {
    Sha256::digest(payload).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: &RunConfig,
        cell: usize,
        eps: f64,
        stage: usize,
        stage_name: String,
        t: f64,
        next_dt: f64,
        angles: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            cell,
            eps,
            stage,
            stage_name,
            t,
            next_dt,
            angles,
            grid: config.grid.clone(),
            n: values.len(),
            sha256: String::new(),
            config: config.clone(),
        };
        Checkpoint { header, values }
    }

    fn payload(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Writes through a temporary file so a crash leaves the previous checkpoint intact.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let payload = self.payload();
        let mut header = self.header.clone();
        header.n = self.values.len();
        header.sha256 = digest(&payload);
        let line = serde_json::to_string(&header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(io)?;
            f.write_all(line.as_bytes()).map_err(io)?;
            f.write_all(b"\n").map_err(io)?;
            f.write_all(&payload).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| CheckpointError::Malformed("no header line".into()))?;
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(CheckpointError::Malformed("not a cone-ke checkpoint".into()));
        }
        let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != VERSION {
            return Err(CheckpointError::Version { found });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let payload = &bytes[nl + 1..];
        if payload.len() != 8 * header.n {
            return Err(CheckpointError::Malformed(format!("payload of {} bytes for {} values", payload.len(), header.n)));
        }
        if digest(payload) != header.sha256 {
            return Err(CheckpointError::Checksum);
        }
        let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Checkpoint { header, values })
    }
}
