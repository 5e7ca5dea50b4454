//! SRT1 dense tensor container.
//!
//! Layout (little-endian): `b"SRT1"`, dtype code `u8` (0 = f32, 1 = f64,
//! 2 = u8), rank `u8`, `rank` dimensions as `u64`, then the raw row-major
//! payload. Nothing follows the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SRT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown SRT1 dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let n = element_count(&dims)?;
        let len = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        };
        if n != len {
            return Err(Error::Argument(format!("dims {dims:?} need {n} elements, got {len}")));
        }
        Ok(Self { dims, data })
    }

    /// Panics if `data.len()` disagrees with `dims`; for internal use where the
    /// caller owns both.
    pub(crate) fn f32(dims: Vec<u64>, data: Vec<f32>) -> Self {
        Self::new(dims, TensorData::F32(data)).expect("tensor dims match data")
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::Format(format!("expected f32 tensor, got {:?}", self.dtype()))),
        }
    }

    /// f64 payloads are returned as-is, f32 payloads are widened.
    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::F32(v) => Ok(v.into_iter().map(f64::from).collect()),
            TensorData::U8(_) => Err(Error::Format("expected float tensor, got u8".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let n = element_count(&self.dims).unwrap_or(0);
        let mut out = Vec::with_capacity(6 + 8 * self.dims.len() + n * dtype.size());
        out.extend_from_slice(MAGIC);
        out.push(dtype.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing SRT1 magic".into()));
        }
        let dtype = DType::from_code(bytes[4])?;
        let rank = usize::from(bytes[5]);
        let header = 6 + 8 * rank;
        if bytes.len() < header {
            return Err(Error::Format(format!("truncated header for rank {rank}")));
        }
        let dims: Vec<u64> = bytes[6..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let n = element_count(&dims)?;
        let payload_len = n
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Capacity(format!("payload for dims {dims:?} overflows")))?;
        let payload = &bytes[header..];
        if payload.len() != payload_len {
            return Err(Error::Format(format!(
                "header declares {n} elements ({payload_len} bytes), payload has {} bytes",
                payload.len()
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Tensor { dims, data })
    }
}

fn element_count(dims: &[u64]) -> Result<usize> {
    if dims.len() > usize::from(u8::MAX) {
        return Err(Error::Capacity(format!("rank {} exceeds 255", dims.len())));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| {
            usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
        })
        .ok_or_else(|| Error::Capacity(format!("dims {dims:?} overflow the address space")))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LogitStack;
    use proptest::prelude::*;

    #[test]
    fn zeros_round_trip() {
        let t = Tensor::f32(vec![2, 2, 3], vec![0.0; 12]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.srt");
        write_tensor(&t, &p).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn single_value_round_trip() {
        let stack = LogitStack::new(1, 1, 1, vec![7.5]).unwrap();
        let back = LogitStack::from_tensor(Tensor::from_bytes(&stack.to_tensor().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.data(), &[7.5]);
    }

    #[test]
    fn short_payload_is_format_error() {
        let mut bytes = Tensor::f32(vec![4], vec![1.0; 4]).to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = Tensor::f32(vec![1], vec![1.0]).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn huge_dims_are_capacity_error() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SRT1");
        bytes.push(0);
        bytes.push(2);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Capacity(_))));
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = Tensor::new(vec![2], TensorData::U8(vec![9, 8])).unwrap().to_bytes();
        assert_eq!(
            bytes,
            [b'S', b'R', b'T', b'1', 2, 1, 2, 0, 0, 0, 0, 0, 0, 0, 9, 8]
        );
    }

    proptest! {
        #[test]
        fn finite_floats_round_trip_bit_exact(
            dims in proptest::collection::vec(1u64..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: u64 = dims.iter().product();
            let mut rng = crate::rng::Xoshiro256StarStar::seed_from_u64(seed);
            let f32s: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32))
                .map(|v| if v.is_finite() { v } else { 1.0 }).collect();
            let f64s: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.next_u64()))
                .map(|v| if v.is_finite() { v } else { -2.0 }).collect();
            for t in [
                Tensor::new(dims.clone(), TensorData::F32(f32s.clone())).unwrap(),
                Tensor::new(dims.clone(), TensorData::F64(f64s.clone())).unwrap(),
            ] {
                let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
                prop_assert_eq!(back.to_bytes(), t.to_bytes());
            }
        }
    }
}
