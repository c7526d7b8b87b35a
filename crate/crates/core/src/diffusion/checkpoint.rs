//! Versioned checkpoint container.
//!
//! ```text
//! biobridge-checkpoint <version>\n
//! <header byte length>\n
//! <TOML header>
//! <tensor blocks, little-endian f32, in index order>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::edm::EdmConfig;
use crate::diffusion::net::{DenoiserNet, NetDenoiser};
use crate::error::{Error, Result};
use crate::io;
use crate::nn::{TensorInfo, UNetConfig};
use crate::preprocess::{Modality, NormStats};

pub const CHECKPOINT_MAGIC: &str = "biobridge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub batch_size: usize,
    pub final_loss: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub ema_decay: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    modality: Modality,
    length: usize,
    edm: EdmConfig,
    norm_stats: NormStats,
    architecture: UNetConfig,
    training: TrainingMeta,
    tensors: Vec<TensorInfo>,
}

/// Trained model for one modality. `net` holds the EMA parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub modality: Modality,
    pub edm: EdmConfig,
    pub norm_stats: NormStats,
    pub net: DenoiserNet,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn denoiser(&self) -> NetDenoiser {
        NetDenoiser::new(self.net.clone(), self.edm, self.modality)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            modality: self.modality,
            length: self.net.length(),
            edm: self.edm,
            norm_stats: self.norm_stats,
            architecture: self.net.net.config.clone(),
            training: self.training.clone(),
            tensors: self.net.params.tensors.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend(io::encode_f32(self.net.params.values.iter().copied()));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::format("checkpoint", detail.to_string());
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = std::str::from_utf8(lines.next().ok_or_else(|| bad("empty file"))?).map_err(|_| bad("magic line"))?;
        let version = magic
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a checkpoint"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len: usize = std::str::from_utf8(lines.next().ok_or_else(|| bad("missing header length"))?)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("header length"))?;
        let rest = lines.next().ok_or_else(|| bad("missing header"))?;
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&rest[..len]).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let values = io::decode_f32(&rest[len..])?;

        let mut net = DenoiserNet::new(header.architecture, header.length, 0)?;
        if net.params.tensors != header.tensors {
            return Err(bad("tensor index does not match the architecture"));
        }
        if values.len() != net.params.len() {
            return Err(bad(&format!("expected {} parameters, found {}", net.params.len(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        net.params.values = values;
        Ok(Self {
            modality: header.modality,
            edm: header.edm,
            norm_stats: header.norm_stats,
            net,
            training: header.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
