//! Binary checkpoint of named tensors.
//!
//! Layout (little-endian): magic `SGN1`, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` × `u32` dims and the
//! `f32` data.

use std::fs;
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGN1";

pub fn encode<'a, T: Scalar>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Config(format!("rank too large: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nl = r.take(2, "name length")?;
        let nl = u16::from_le_bytes([nl[0], nl[1]]) as usize;
        let name = std::str::from_utf8(r.take(nl, "name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&name)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: shape overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint(name.clone()))?, &name)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        store.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(store.iter())?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(0usize..5, 0..4),
            seed in any::<u64>(),
            name in "[a-z.0-9]{1,20}",
        ) {
            let mut store = ParamStore::<f32>::new();
            let t = Tensor::<f32>::randn(&dims, 1.0, seed);
            store.insert(name.clone(), t);
            store.insert("tail", Tensor::scalar(f32::MIN_POSITIVE));
            let bytes = encode(store.iter()).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &store);
            prop_assert_eq!(encode(back.iter()).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let bytes = encode(store.iter()).unwrap();
        let expected: Vec<u8> = [
            b"SGN1".as_slice(),
            &1u32.to_le_bytes(),
            &1u16.to_le_bytes(),
            b"w",
            &[1u8],
            &2u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
            &(-2.0f32).to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_inputs() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(&[3, 4]));
        let bytes = encode(store.iter()).unwrap();
        for cut in [0, 3, 6, 9, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::CorruptCheckpoint(_))));
    }
}
