//! Binary container for named `f64` tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NIOT" | version u32 | count u32
//! count × { name_len u16 | name (UTF-8) | rank u8 | rank × extent u64 | payload f64 LE }
//! crc32 u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const MAGIC: [u8; 4] = *b"NIOT";
pub const VERSION: u32 = 1;

pub type TensorMap = BTreeMap<String, Tensor>;

pub fn encode_tensors(tensors: &TensorMap) -> Result<Vec<u8>> {
    let payload: usize = tensors.values().map(|t| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::usage("too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        if !t.is_finite() {
            return Err(Error::usage(format!("tensor `{name}` contains non-finite values")));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| Error::usage(format!("tensor name too long: {} bytes", name.len())))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::usage("tensor rank above 255"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { context });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, context: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, context)?.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses a container. Checks run in order: magic, version, structure
/// (truncation), trailing checksum.
pub fn decode_tensors(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.array::<4>("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(r.array("version")?);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(r.array("entry count")?);
    let mut map = TensorMap::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.array::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = u64::from_le_bytes(r.array("extent")?);
            shape.push(usize::try_from(e).map_err(|_| Error::Malformed(format!("extent {e} too large")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or(Error::Truncated { context: "payload" })?;
        let data = r
            .take(numel * 8, "payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Malformed(format!("`{name}`: {e}")))?;
        if map.insert(name.clone(), tensor).is_some() {
            return Err(Error::Malformed(format!("duplicate tensor name `{name}`")));
        }
    }
    let body_end = r.pos;
    let stored = u32::from_le_bytes(r.array("checksum")?);
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes after checksum", r.remaining())));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(map)
}

pub fn save_tensors(path: &Path, tensors: &TensorMap) -> Result<()> {
    write_atomic(path, &encode_tensors(tensors)?)
}

pub fn load_tensors(path: &Path) -> Result<TensorMap> {
    decode_tensors(&std::fs::read(path)?)
}
