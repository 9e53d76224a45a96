//! Decoder checkpoints.
//!
//! Layout (little-endian): `"CELPCKPT"`, u32 version, u64 parameter count,
//! that many f64 parameters in [`Decoder::flat_params`] order, u64 step.

use std::path::Path;

use crate::error::{CelpError, Result};
use crate::numeric::Real;

use super::decoder::{Decoder, DecoderShape};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CELPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<f64>,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_decoder<T: Real>(decoder: &Decoder<T>, step: usize) -> Self {
        Checkpoint {
            params: decoder.flat_params(),
            step: step as u64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let format = |offset: usize, message: String| CelpError::Format {
            offset: offset as u64,
            message,
        };
        let take = |offset: usize, n: usize| -> Result<&[u8]> {
            bytes.get(offset..offset + n).ok_or_else(|| {
                format(
                    offset,
                    format!("expected {} bytes, found {}", n, bytes.len().saturating_sub(offset)),
                )
            })
        };
        if take(0, 8)? != CHECKPOINT_MAGIC {
            return Err(format(0, "bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format(8, format!("unsupported checkpoint version {version}")));
        }
        let count = u64::from_le_bytes(take(12, 8)?.try_into().unwrap()) as usize;
        let payload = count
            .checked_mul(8)
            .ok_or_else(|| format(12, format!("parameter count {count} overflows")))?;
        let params = take(20, payload)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let step = u64::from_le_bytes(take(20 + payload, 8)?.try_into().unwrap());
        let end = 28 + payload;
        if bytes.len() != end {
            return Err(format(end, format!("{} trailing bytes", bytes.len() - end)));
        }
        Ok(Checkpoint { params, step })
    }

    /// Rebuilds a decoder of the given shape; a size mismatch names both.
    pub fn to_decoder<T: Real>(&self, shape: DecoderShape) -> Result<Decoder<T>> {
        if self.params.len() != shape.parameter_count() {
            return Err(CelpError::dim(format!(
                "checkpoint holds {} parameters but the configured decoder \
                 (in_channels={}, hidden={}) has {}",
                self.params.len(),
                shape.in_channels,
                shape.hidden,
                shape.parameter_count()
            )));
        }
        Decoder::from_flat(shape, &self.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| CelpError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CelpError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
