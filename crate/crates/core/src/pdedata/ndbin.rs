//! `ndbin` tensor files: magic `NDB1`, a `u8` dtype code (0 = f64
//! little-endian), a `u8` rank, `rank` little-endian `u64` extents, then the
//! row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"NDB1";
pub const DTYPE_F64: u8 = 0;

pub fn encode(t: &Tensor<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F64);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f64>> {
    let bad = |msg: String| Error::Format(format!("ndbin: {msg}"));
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing NDB1 magic".into()));
    }
    if bytes[4] != DTYPE_F64 {
        return Err(bad(format!("unsupported dtype code {}", bytes[4])));
    }
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err(bad("rank 0 is not supported".into()));
    }
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: u64 = 1;
    for k in 0..ndim {
        let raw: [u8; 8] = bytes[6 + 8 * k..14 + 8 * k].try_into().expect("8 bytes");
        let d = u64::from_le_bytes(raw);
        count = count
            .checked_mul(d)
            .ok_or_else(|| bad("extent product overflows".into()))?;
        shape.push(d as usize);
    }
    let payload = &bytes[header..];
    if payload.len() as u64 != count.saturating_mul(8) {
        return Err(bad(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f64>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let b = encode(&t);
        let mut expected = b"NDB1".to_vec();
        expected.extend([0u8, 2]);
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-0.5f64).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = encode(&t);
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut dtype = good.clone();
        dtype[4] = 1;
        assert!(decode(&dtype).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut shape = good;
        shape[6] = 4;
        assert!(decode(&shape).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let mut x = seed;
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(x >> 2)
                })
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
