//! TSR binary tensor files.
//!
//! Little-endian layout:
//!
//! | bytes        | field                          |
//! |--------------|--------------------------------|
//! | 0..4         | magic `ACIT`                   |
//! | 4            | version, `1`                   |
//! | 5            | dtype, `0` = f32, `1` = f64    |
//! | 6            | rank                           |
//! | 7            | reserved, `0`                  |
//! | 8..8+4*rank  | extents, `u32` each            |
//! | rest         | row-major payload              |

use std::path::Path;

use crate::error::{AcitError, Result};
use crate::tensor::{numel, DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ACIT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested element type.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    out.push(0);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> AcitError {
    AcitError::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 8 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(format_err(5, format!("unknown dtype code {other}"))),
    };
    let rank = bytes[6] as usize;
    if bytes[7] != 0 {
        return Err(format_err(7, "reserved byte must be 0"));
    }
    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(format_err(bytes.len(), "truncated extents"));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(format_err(off, "zero extent"));
        }
        shape.push(d);
    }
    let n = numel(&shape);
    let need = dims_end + n * dtype.size();
    if bytes.len() < need {
        return Err(format_err(bytes.len(), format!("truncated payload, expected {need} bytes")));
    }
    if bytes.len() > need {
        return Err(format_err(need, "trailing bytes after payload"));
    }
    let payload = &bytes[dims_end..];
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(
            shape,
            payload.chunks_exact(4).map(f32::read_le).collect(),
        )?),
        DType::F64 => AnyTensor::F64(Tensor::new(
            shape,
            payload.chunks_exact(8).map(f64::read_le).collect(),
        )?),
    })
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| AcitError::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AcitError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let b = encode(&t);
        assert_eq!(&b[..8], &[b'A', b'C', b'I', b'T', 1, 0, 2, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
    }

    #[test]
    fn errors_carry_offsets() {
        let t = Tensor::<f64>::from_fn(&[4], |i| i as f64);
        let mut b = encode(&t);
        b[5] = 9;
        assert!(matches!(decode(&b), Err(AcitError::Format { offset: 5, .. })));
        let b = encode(&t);
        assert!(matches!(decode(&b[..b.len() - 3]), Err(AcitError::Format { .. })));
        assert!(matches!(decode(b"AC"), Err(AcitError::Format { offset: 2, .. })));
        let mut b2 = b.clone();
        b2[0] = b'X';
        assert!(matches!(decode(&b2), Err(AcitError::Format { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 0..5),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::Rng::new(seed);
            let t32 = Tensor::<f32>::from_fn(&dims, |_| (rng.normal() * 1e3) as f32);
            let t64 = Tensor::<f64>::from_fn(&dims, |_| rng.normal() * 1e-7);
            prop_assert_eq!(decode(&encode(&t32)).unwrap(), AnyTensor::F32(t32));
            prop_assert_eq!(decode(&encode(&t64)).unwrap(), AnyTensor::F64(t64));
        }
    }
}
