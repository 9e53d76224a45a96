//! Binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | offset      | size      | field                                   |
//! |-------------|-----------|-----------------------------------------|
//! | 0           | 4         | magic `CELP`                            |
//! | 4           | 4 (u32)   | version, currently 1                    |
//! | 8           | 1 (u8)    | dtype: 0 = f32, 1 = f64, 2 = u8         |
//! | 9           | 1 (u8)    | ndim                                    |
//! | 10          | 8·ndim    | extents (u64 each)                      |
//! | 10 + 8·ndim | remainder | row-major payload                       |
//!
//! Masks are stored as u8 tensors of shape `h×w`.

use std::fs;
use std::path::Path;

use crate::error::{CelpError, Result};
use crate::mask::LabelMask;
use crate::numeric::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"CELP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl Dtype {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U8),
            other => Err(CelpError::UnsupportedDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.len() > u8::MAX as usize || n != data.len() {
            return Err(CelpError::dim(format!(
                "shape {shape:?} does not fit {} values",
                data.len()
            )));
        }
        Ok(TensorFile { shape, data })
    }

    pub fn from_tensor<T: Real>(tensor: &Tensor<T>) -> Self {
        let data = if T::NAME == "f32" {
            TensorData::F32(tensor.data().iter().map(|x| x.as_f64() as f32).collect())
        } else {
            TensorData::F64(tensor.data().iter().map(|x| x.as_f64()).collect())
        };
        TensorFile {
            shape: tensor.shape().to_vec(),
            data,
        }
    }

    pub fn from_mask(mask: &LabelMask) -> Self {
        TensorFile {
            shape: vec![mask.height(), mask.width()],
            data: TensorData::U8(mask.labels().to_vec()),
        }
    }

    /// Numeric view; any dtype converts losslessly into f64.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let values: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
        };
        Tensor::new(self.shape.clone(), values)
    }

    pub fn to_mask(&self) -> Result<LabelMask> {
        match (&self.data, self.shape.as_slice()) {
            (TensorData::U8(v), &[h, w]) => LabelMask::new(h, w, v.clone()),
            (TensorData::U8(_), shape) => Err(CelpError::dim(format!(
                "mask file needs shape h×w, got {shape:?}"
            ))),
            (other, _) => Err(CelpError::Format {
                offset: 8,
                message: format!("mask file needs dtype u8, got {:?}", other.dtype()),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.shape.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype() as u8);
        out.push(self.shape.len() as u8);
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |offset: usize, len: usize, what: &str| -> Result<()> {
            if bytes.len() < offset + len {
                Err(CelpError::Format {
                    offset: offset as u64,
                    message: format!(
                        "truncated {what}: expected {len} bytes, found {}",
                        bytes.len().saturating_sub(offset)
                    ),
                })
            } else {
                Ok(())
            }
        };
        need(0, 4, "magic")?;
        if &bytes[..4] != MAGIC {
            return Err(CelpError::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected \"CELP\"", &bytes[..4]),
            });
        }
        need(4, 4, "version")?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CelpError::Format {
                offset: 4,
                message: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        need(8, 2, "dtype/ndim")?;
        let dtype = Dtype::from_byte(bytes[8])?;
        let ndim = bytes[9] as usize;
        need(10, 8 * ndim, "extents")?;
        let mut shape = Vec::with_capacity(ndim);
        for d in 0..ndim {
            let at = 10 + 8 * d;
            let e = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            if e == 0 {
                return Err(CelpError::Format {
                    offset: at as u64,
                    message: "zero extent".into(),
                });
            }
            shape.push(usize::try_from(e).map_err(|_| CelpError::Format {
                offset: at as u64,
                message: format!("extent {e} too large"),
            })?);
        }
        let header = 10 + 8 * ndim;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| CelpError::Format {
                offset: 10,
                message: "payload size overflows".into(),
            })?;
        let payload = &bytes[header..];
        if payload.len() != count {
            return Err(CelpError::Format {
                offset: header as u64,
                message: format!(
                    "payload size mismatch: expected {count} bytes, found {}",
                    payload.len()
                ),
            });
        }
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            Dtype::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(TensorFile { shape, data })
    }
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CelpError::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

pub fn write_tensor_file(path: impl AsRef<Path>, file: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, file.to_bytes()).map_err(|e| CelpError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn header_layout_is_exact() {
        let file = TensorFile::new(vec![2], TensorData::U8(vec![1, 255])).unwrap();
        let bytes = file.to_bytes();
        assert_eq!(
            bytes,
            [b'C', b'E', b'L', b'P', 1, 0, 0, 0, 2, 1, 2, 0, 0, 0, 0, 0, 0, 0, 1, 255]
        );
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let mut rng = SplitMix64::new(1);
        let t = Tensor::<f64>::from_fn(vec![3, 4, 5], |_| rng.normal());
        let file = TensorFile::from_tensor(&t);
        let back = TensorFile::from_bytes(&file.to_bytes()).unwrap();
        let t2: Tensor<f64> = back.to_tensor().unwrap();
        assert!(t
            .data()
            .iter()
            .zip(t2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(t2.shape(), &[3, 4, 5]);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let file = TensorFile::new(vec![2, 2], TensorData::F32(vec![1.0; 4])).unwrap();
        let mut bytes = file.to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = TensorFile::from_bytes(&bytes).unwrap_err();
        match err {
            CelpError::Format { offset, message } => {
                assert_eq!(offset, 26);
                assert!(message.contains("expected 16"), "{message}");
                assert!(message.contains("found 13"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header() {
        let good = TensorFile::new(vec![1], TensorData::U8(vec![0])).unwrap().to_bytes();
        let mut bad = good.clone();
        bad[8] = 7;
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(CelpError::UnsupportedDtype(7))
        ));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(CelpError::Format { offset: 0, .. })
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(CelpError::Format { offset: 4, .. })
        ));
        assert!(matches!(
            TensorFile::from_bytes(&good[..12]),
            Err(CelpError::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn mask_round_trip() {
        let mask = LabelMask::new(2, 3, vec![0, 1, 255, 1, 0, 0]).unwrap();
        let back = TensorFile::from_bytes(&TensorFile::from_mask(&mask).to_bytes())
            .unwrap()
            .to_mask()
            .unwrap();
        assert_eq!(back, mask);
        let not_mask = TensorFile::new(vec![2], TensorData::U8(vec![0, 3])).unwrap();
        assert!(not_mask.to_mask().is_err());
    }
}
