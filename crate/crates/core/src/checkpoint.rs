//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `DPRP`, version `u16 = 1`, tensor count
//! `u32`; then per tensor a `u16` name length, the UTF-8 name, a `u8` rank,
//! `rank` dims as `u64`, and the values as row-major `f64`.

use std::path::Path;

use crate::binio::{read_file, write_file, ByteReader};
use crate::error::Result;
use crate::model::{ModelConfig, Params};

pub const MAGIC: &[u8; 4] = b"DPRP";
pub const VERSION: u16 = 1;

const NAMES: [&str; 6] = ["W1", "b1", "W2", "b2", "Wh", "bh"];

pub fn encode(params: &Params) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(16 + params.len() * 8 + tensors.len() * 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Params> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != MAGIC {
        return Err(r.error("bad magic, expected DPRP"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    if count as usize != NAMES.len() {
        return Err(r.error(format!("expected {} tensors, found {count}", NAMES.len())));
    }
    let mut shapes = Vec::with_capacity(NAMES.len());
    let mut values = Vec::new();
    for expected in NAMES {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| r.error("tensor name is not UTF-8"))?;
        if name != expected {
            return Err(r.error(format!("expected tensor {expected}, found {name}")));
        }
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| r.error("dimension overflow"))?;
            dims.push(d);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| r.error(format!("tensor {name} larger than remaining payload")))?;
        for _ in 0..n {
            values.push(r.f64()?);
        }
        shapes.push(dims);
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    let dim = |i: usize, k: usize| -> Result<usize> {
        shapes[i].get(k).copied().ok_or_else(|| r.error(format!("tensor {} has rank {}", NAMES[i], shapes[i].len())))
    };
    let cfg = ModelConfig {
        input_dim: dim(0, 1)?,
        hidden_dim: dim(0, 0)?,
        embed_dim: dim(2, 0)?,
        n_labels: dim(4, 0)?,
    };
    let expected: [Vec<usize>; 6] = [
        vec![cfg.hidden_dim, cfg.input_dim],
        vec![cfg.hidden_dim],
        vec![cfg.embed_dim, cfg.hidden_dim],
        vec![cfg.embed_dim],
        vec![cfg.n_labels, cfg.embed_dim],
        vec![cfg.n_labels],
    ];
    for (i, (got, want)) in shapes.iter().zip(&expected).enumerate() {
        if got != want {
            return Err(r.error(format!("tensor {} has shape {got:?}, expected {want:?}", NAMES[i])));
        }
    }
    Params::from_flat(cfg, values).map_err(|e| r.error(e.to_string()))
}

pub fn write_checkpoint(params: &Params, path: &Path) -> Result<()> {
    write_file(path, &encode(params))
}

pub fn read_checkpoint(path: &Path) -> Result<Params> {
    decode(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::init_params;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(p in 1usize..6, h in 1usize..6, d in 1usize..5, l in 1usize..4, seed in any::<u64>()) {
            let cfg = ModelConfig { input_dim: p, hidden_dim: h, embed_dim: d, n_labels: l };
            let params = init_params(cfg, seed).unwrap();
            let bytes = encode(&params);
            let back = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            prop_assert_eq!(back, params);
        }
    }

    #[test]
    fn header_layout() {
        let cfg = ModelConfig { input_dim: 2, hidden_dim: 3, embed_dim: 1, n_labels: 1 };
        let bytes = encode(&init_params(cfg, 0).unwrap());
        assert_eq!(&bytes[..4], b"DPRP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 6);
        // first tensor: "W1", rank 2, dims [3, 2]
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 2);
        assert_eq!(&bytes[12..14], b"W1");
        assert_eq!(bytes[14], 2);
        assert_eq!(u64::from_le_bytes(bytes[15..23].try_into().unwrap()), 3);
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let cfg = ModelConfig { input_dim: 2, hidden_dim: 3, embed_dim: 1, n_labels: 1 };
        let bytes = encode(&init_params(cfg, 0).unwrap());
        let p = Path::new("mem");
        assert!(matches!(decode(&bytes[..bytes.len() - 3], p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, p), Err(Error::Format { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode(&extra, p), Err(Error::Format { .. })));
    }
}
