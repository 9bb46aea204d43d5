//! Named-tensor dump: `"SRNT"`, u32 version, u32 count, then per tensor
//! u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian f64 data.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Result, SrnError};

pub const DUMP_MAGIC: &[u8; 4] = b"SRNT";
pub const DUMP_VERSION: u32 = 1;

pub fn write_dump<'a, I>(tensors: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let items: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SrnError::format(
                self.path,
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Parses a dump; `path` is only used for error messages.
pub fn read_dump(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if cur.take(4, "magic")? != DUMP_MAGIC {
        return Err(SrnError::format(path, 0, "bad magic, expected SRNT"));
    }
    let version = cur.u32("version")?;
    if version != DUMP_VERSION {
        return Err(SrnError::format(
            path,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let count = cur.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let at = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| SrnError::format(path, at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")? as usize);
        }
        let at = cur.pos;
        let n: usize = dims.iter().product();
        let raw = cur.take(n * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| SrnError::format(path, at, e.to_string()))?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(SrnError::format(
            path,
            cur.pos,
            "trailing bytes after last tensor",
        ));
    }
    Ok(out)
}

/// Writes atomically (temp file + rename).
pub fn write_dump_file<'a, I>(path: &Path, tensors: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let bytes = write_dump(tensors);
    crate::io_util::write_atomic(path, &bytes)
}

pub fn read_dump_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path)?;
    read_dump(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let bytes = write_dump([("w", &t)]);
        assert_eq!(&bytes[..4], b"SRNT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'w');
        assert_eq!(bytes.len(), 12 + 4 + 1 + 4 + 8 + 16);
        assert_eq!(&bytes[bytes.len() - 8..], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let t = Tensor::zeros(&[3]);
        let bytes = write_dump([("abc", &t)]);
        let err = read_dump(&bytes[..bytes.len() - 3], Path::new("x.srnt")).unwrap_err();
        match err {
            SrnError::Format { offset, .. } => assert_eq!(offset, 12 + 4 + 3 + 4 + 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(read_dump(b"NOPE\x01\0\0\0\0\0\0\0", Path::new("x")).is_err());
    }
}
