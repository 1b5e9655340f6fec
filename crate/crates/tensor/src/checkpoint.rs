//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "CSGT"
//! version    u32
//! repeated until EOF:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u64 × rank
//!   payload  f64 × product(dims)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"CSGT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated inside parameter {0:?}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let mut store = ParamStore::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("<name>")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "<name>")?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32(&name)? as usize;
        if rank > 2 {
            return Err(CheckpointError::Malformed(format!("{name}: rank {rank} > 2")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64(&name)? as usize);
        }
        let n: usize = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: dimension overflow")))?;
        let raw = cur.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(name.clone()))?, &name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Malformed(format!("{name}: non-finite value")));
        }
        let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        store.insert(name, t);
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(ctx.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    fn u64(&mut self, ctx: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, ctx)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_rows(&[&[1.0, -2.5], &[0.125, 3.0]]).unwrap());
        s.insert("b", Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = store();
        let back = parse_checkpoint(&checkpoint_bytes(&s)).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn header_layout() {
        let bytes = checkpoint_bytes(&store());
        assert_eq!(&bytes[..4], b"CSGT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        // first record: name length 1, "w", rank 2
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], b'w');
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = checkpoint_bytes(&store());
        assert!(matches!(parse_checkpoint(b"NOPE\x01\0\0\0"), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(parse_checkpoint(&v2), Err(CheckpointError::UnsupportedVersion(9))));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(parse_checkpoint(cut), Err(CheckpointError::Truncated(_))));
    }
}
