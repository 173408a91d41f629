//! `GABW` weight container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GABW" | u32 version | u32 len, descriptor JSON | u32 tensor count |
//! per tensor: u32 len, name | u32 rank | u32 dims[rank] | f64 data
//! ```
//!
//! Tensors are written in name order, so saving a loaded checkpoint
//! reproduces the original bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Architecture, Autoencoder, ModelKind};
use crate::autodiff::Params;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::forward::Normalization;
use crate::tensor::Tensor;

pub const GABW_MAGIC: [u8; 4] = *b"GABW";
pub const GABW_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub architecture: Architecture,
    pub normalization: Normalization,
    /// Hex SHA-256 of the training configuration that produced the weights.
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub params: Params,
}

/// Hex SHA-256 of any serialisable configuration.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Checkpoint {
    pub fn new(descriptor: Descriptor, params: Params) -> Result<Self> {
        let ckpt = Self { descriptor, params };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        let arch = &self.descriptor.architecture;
        arch.validate()?;
        arch.check_params(&self.params)?;
        let norm = &self.descriptor.normalization;
        if norm.mean.len() != arch.field_channels || norm.std.len() != arch.field_channels {
            return Err(Error::Consistency(format!(
                "normalisation for {} channels, architecture has {}",
                norm.mean.len(),
                arch.field_channels
            )));
        }
        Ok(())
    }

    pub fn architecture(&self) -> &Architecture {
        &self.descriptor.architecture
    }

    pub fn autoencoder(&self) -> Result<Autoencoder> {
        if self.descriptor.architecture.kind != ModelKind::Autoencoder {
            return Err(Error::Consistency("checkpoint does not hold an autoencoder".into()));
        }
        Autoencoder::new(
            self.descriptor.architecture.clone(),
            self.params.clone(),
            self.descriptor.normalization.clone(),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(&GABW_MAGIC);
        w.u32(GABW_VERSION);
        w.string(&serde_json::to_string(&self.descriptor)?)?;
        w.len_u32(self.params.len())?;
        for (name, t) in &self.params {
            w.string(name)?;
            w.len_u32(t.rank())?;
            for &d in t.shape() {
                w.len_u32(d)?;
            }
            w.f64s(t.data());
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(GABW_MAGIC)?;
        let version = r.u32()?;
        if version != GABW_VERSION {
            return Err(Error::VersionMismatch {
                expected: GABW_VERSION,
                found: version,
            });
        }
        let descriptor: Descriptor = serde_json::from_str(&r.string()?)?;
        let count = r.u32()?;
        let mut params = Params::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product();
            let t = Tensor::new(shape, r.f64s(numel)?)?;
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::Consistency(format!("duplicate tensor {name}")));
            }
        }
        if !r.is_at_end() {
            return Err(Error::Consistency(format!("trailing bytes at offset {}", r.offset())));
        }
        Self::new(descriptor, params)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}
