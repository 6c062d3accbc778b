//! Flattened model parameters and their checkpoint encoding.

use std::ops::{Deref, DerefMut};

use thiserror::Error;

/// Checkpoint magic, the ASCII bytes `DFLW`.
pub const PARAMS_MAGIC: [u8; 4] = *b"DFLW";
pub const PARAMS_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("checkpoint too short: {0} bytes")]
    Truncated(usize),
    #[error("not a parameter checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("header declares {declared} values but the payload holds {actual}")]
    LengthMismatch { declared: u64, actual: usize },
}

/// A model's parameters in canonical order, the unit every aggregation rule
/// consumes and produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn l2_distance(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Layout: `"DFLW"`, version (u32 LE), value count (u64 LE), then the
    /// values as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.0.len());
        out.extend_from_slice(&PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamsError> {
        if bytes.len() < HEADER_LEN {
            return Err(ParamsError::Truncated(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != PARAMS_MAGIC {
            return Err(ParamsError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PARAMS_VERSION {
            return Err(ParamsError::BadVersion(version));
        }
        let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        if !payload.len().is_multiple_of(8) || (payload.len() / 8) as u64 != declared {
            return Err(ParamsError::LengthMismatch {
                declared,
                actual: payload.len() / 8,
            });
        }
        Ok(Self(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = ParamVector::new(vec![1.5]).to_bytes();
        assert_eq!(&bytes[..4], b"DFLW");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_checkpoints() {
        let good = ParamVector::new(vec![1.0, 2.0]).to_bytes();
        assert_eq!(ParamVector::from_bytes(&good[..10]), Err(ParamsError::Truncated(10)));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(ParamVector::from_bytes(&bad), Err(ParamsError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(ParamVector::from_bytes(&bad), Err(ParamsError::BadVersion(9)));
        assert!(matches!(
            ParamVector::from_bytes(&good[..good.len() - 8]),
            Err(ParamsError::LengthMismatch { declared: 2, actual: 1 })
        ));
    }

    #[test]
    fn distance_to_self_is_zero() {
        let v = ParamVector::new(vec![0.3, -7.0, 1e10]);
        assert_eq!(v.l2_distance(&v), 0.0);
        assert_eq!(ParamVector::new(vec![3.0, 4.0]).l2_norm(), 5.0);
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exactly(v in prop::collection::vec(any::<f64>(), 0..64)) {
            let back = ParamVector::from_bytes(&ParamVector::new(v.clone()).to_bytes()).unwrap();
            let bits = |x: &[f64]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&v));
        }
    }
}
