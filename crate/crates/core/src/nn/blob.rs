//! Little-endian binary container helpers with a trailing SHA-256.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Default)]
pub struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    /// Shape header followed by the values.
    pub fn array(&mut self, shape: &[usize], data: &[f64]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        self.u64(data.len() as u64);
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Payload followed by the SHA-256 of the payload.
    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub struct BlobReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> BlobReader<'a> {
    /// Verifies the checksum, magic and version before handing out a reader.
    pub fn open(bytes: &'a [u8], path: &'a Path, magic: &[u8; 4], version: u32) -> Result<Self> {
        let fail = |check: &str| Error::Integrity {
            path: path.to_path_buf(),
            check: check.to_string(),
        };
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(fail("file too short (truncated?)"));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(fail("checksum mismatch (truncated or corrupted payload)"));
        }
        if &payload[..4] != magic {
            return Err(fail("bad magic bytes"));
        }
        let mut r = Self {
            buf: payload,
            pos: 4,
            path,
        };
        let found = r.u32()?;
        if found != version {
            return Err(fail(&format!(
                "unsupported format version {found}, expected {version}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity {
                path: self.path.to_path_buf(),
                check: "unexpected end of payload".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(Error::Integrity {
                path: self.path.to_path_buf(),
                check: format!("length field {n} exceeds payload"),
            });
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Integrity {
            path: self.path.to_path_buf(),
            check: "string field is not UTF-8".into(),
        })
    }

    pub fn array(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n = self.len()?;
        if shape.iter().product::<usize>() != n {
            return Err(Error::Integrity {
                path: self.path.to_path_buf(),
                check: format!("array of {n} values does not match shape {shape:?}"),
            });
        }
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Integrity {
            path: self.path.to_path_buf(),
            check: "array length overflow".into(),
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((shape, data))
    }

    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}
