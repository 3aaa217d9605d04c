//! Versioned binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LODOCKPT"
//! version  u32      1
//! step     u64      optimizer step counter
//! count    u32      number of tensors
//! table    count × { name_len u32, name utf-8, role u8, precision u8 (4|8),
//!                    ndim u32, dims u64 × ndim }
//! data     each tensor's values in table order, IEEE-754 little-endian
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::tensor::{Precision, Scalar, Tensor};
use super::TensorRole;

pub const MAGIC: &[u8; 8] = b"LODOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("BadMagic: not a checkpoint file")]
    BadMagic,
    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u32),
    #[error("Truncated: checkpoint ends early")]
    Truncated,
    #[error("PrecisionMismatch: tensor {name} stored as {found:?}, requested {expected:?}")]
    PrecisionMismatch {
        name: String,
        expected: Precision,
        found: Precision,
    },
    #[error("Corrupt: {0}")]
    Corrupt(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<S> {
    pub name: String,
    pub role: TensorRole,
    pub tensor: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub step: u64,
    pub tensors: Vec<NamedTensor<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.role.code());
            out.push(S::PRECISION.code());
            out.extend_from_slice(&(t.tensor.shape().len() as u32).to_le_bytes());
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for &v in t.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
            let role = TensorRole::from_code(r.u8()?)
                .ok_or_else(|| CheckpointError::Corrupt(format!("unknown role for {name}")))?;
            let precision = Precision::from_code(r.u8()?)
                .ok_or_else(|| CheckpointError::Corrupt(format!("unknown precision for {name}")))?;
            if precision != S::PRECISION {
                return Err(CheckpointError::PrecisionMismatch {
                    name,
                    expected: S::PRECISION,
                    found: precision,
                });
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            table.push((name, role, shape));
        }
        let width = S::PRECISION.bytes();
        let mut tensors = Vec::with_capacity(table.len());
        for (name, role, shape) in table {
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(width).ok_or(CheckpointError::Truncated)?)?;
            let data = raw.chunks_exact(width).map(S::read_le).collect();
            let tensor =
                Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.push(NamedTensor { name, role, tensor });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self { step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Precision stored in a checkpoint, read from its first table entry.
pub fn peek_precision(bytes: &[u8]) -> Result<Option<Precision>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    r.u64()?;
    if r.u32()? == 0 {
        return Ok(None);
    }
    let len = r.u32()? as usize;
    r.take(len)?;
    r.u8()?;
    Ok(Precision::from_code(r.u8()?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample<S: Scalar>(vals: &[f64]) -> Checkpoint<S> {
        Checkpoint {
            step: 42,
            tensors: vec![
                NamedTensor {
                    name: "sa1.0.weight".into(),
                    role: TensorRole::Weight,
                    tensor: Tensor::from_f64(&[1, vals.len()], vals).unwrap(),
                },
                NamedTensor {
                    name: "head.1.bias".into(),
                    role: TensorRole::Bias,
                    tensor: Tensor::from_f64(&[2], &[0.25, -1.5]).unwrap(),
                },
                NamedTensor {
                    name: "scalar".into(),
                    role: TensorRole::AdamSecondMoment,
                    tensor: Tensor::scalar(S::of(3.0)),
                },
            ],
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(-1e30f64..1e30, 1..40)) {
            let c64 = sample::<f64>(&vals);
            prop_assert_eq!(Checkpoint::<f64>::from_bytes(&c64.to_bytes()).unwrap(), c64);
            let c32 = sample::<f32>(&vals);
            let back = Checkpoint::<f32>::from_bytes(&c32.to_bytes()).unwrap();
            let bits = |c: &Checkpoint<f32>| c.tensors.iter().flat_map(|t| t.tensor.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&c32));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = sample::<f64>(&[1.0, 2.0]).to_bytes();
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated)
        ));
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(b"NOTACKPT\x01\x00\x00\x00"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes),
            Err(CheckpointError::PrecisionMismatch { .. })
        ));
        assert_eq!(peek_precision(&bytes).unwrap(), Some(Precision::F64));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&v2),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
    }
}
