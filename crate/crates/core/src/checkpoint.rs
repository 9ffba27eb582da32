//! Versioned binary container for trained controllers.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, every parameter tensor as little-endian `f64` in store order, and
//! a trailing SHA-256 digest of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::episode::SystemConfig;
use crate::error::{Error, Result};
use crate::net::{Controller, Dims, NetConfig, Variant};

pub const MAGIC: &[u8; 8] = b"RISTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: Dims,
    net: NetConfig,
    variant: Variant,
    config_hash: String,
    config: ExperimentConfig,
    epoch: usize,
    val_min_rate: Option<f64>,
    tensors: Vec<TensorEntry>,
}

/// A controller together with the provenance of its training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub controller: Controller,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub epoch: usize,
    /// `None` when the metric was not finite.
    pub val_min_rate: Option<f64>,
}

impl Checkpoint {
    pub fn new(controller: Controller, config: ExperimentConfig, epoch: usize, val_min_rate: f64) -> Self {
        let config_hash = config.hash();
        Self { controller, config, config_hash, epoch, val_min_rate: val_min_rate.is_finite().then_some(val_min_rate) }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.controller.store;
        let header = Header {
            dims: self.controller.dims,
            net: self.controller.net.clone(),
            variant: self.controller.variant,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            val_min_rate: self.val_min_rate,
            tensors: store
                .names
                .iter()
                .zip(&store.tensors)
                .map(|(n, t)| TensorEntry { name: n.clone(), rows: t.rows, cols: t.cols })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * store.num_scalars() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &store.tensors {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic or truncated)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("integrity check failed: checksum mismatch (file is corrupted)"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(20..20usize.saturating_add(hlen)).ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let mut controller = Controller::new(header.dims, header.net.clone(), header.variant, 0)?;
        let store = &mut controller.store;
        if store.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, file holds {}", store.len(), header.tensors.len())));
        }
        let mut payload = &body[20 + hlen..];
        for ((name, t), e) in store.names.iter().zip(store.tensors.iter_mut()).zip(&header.tensors) {
            if *name != e.name || t.rows != e.rows || t.cols != e.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` ({}x{}) does not match expected `{name}` ({}x{})",
                    e.name, e.rows, e.cols, t.rows, t.cols
                )));
            }
            let n = 8 * t.data.len();
            if payload.len() < n {
                return Err(bad("payload truncated"));
            }
            for (x, chunk) in t.data.iter_mut().zip(payload[..n].chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            payload = &payload[n..];
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Self { controller, config: header.config, config_hash: header.config_hash, epoch: header.epoch, val_min_rate: header.val_min_rate })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rejects systems whose dimensions differ from the ones the controller was built for.
    pub fn check_compatible(&self, sys: &SystemConfig) -> Result<()> {
        let want = Dims::from_system(sys);
        let have = self.controller.dims;
        if want != have {
            return Err(Error::Shape(format!(
                "checkpoint was trained for M={}, N_r={}, K={}, L={} but the system has M={}, N_r={}, K={}, L={}",
                have.antennas, have.ris_elements, have.users, have.sensing_blocks, want.antennas, want.ris_elements, want.users, want.sensing_blocks
            )));
        }
        Ok(())
    }
}
