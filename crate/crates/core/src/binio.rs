//! Little-endian readers and writers shared by the binary file formats.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reader that tracks its byte offset for diagnostics.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            msg: msg.into(),
        })
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format {
            offset: self.offset,
            msg: format!("expected {n} more bytes: {e}"),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format {
            offset: self.offset,
            msg: format!("expected {N} more bytes: {e}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Length-prefixed (u64) UTF-8 string, bounded by `max`.
    pub fn string(&mut self, max: usize) -> Result<String> {
        let at = self.offset;
        let n = self.u64()? as usize;
        if n > max {
            return Err(Error::Format {
                offset: at,
                msg: format!("string length {n} exceeds limit {max}"),
            });
        }
        let b = self.bytes(n)?;
        String::from_utf8(b).map_err(|_| Error::Format {
            offset: at,
            msg: "string is not UTF-8".into(),
        })
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.bytes(magic.len())?;
        if got != magic {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(())
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => self.fail("trailing bytes after payload"),
        }
    }
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn put_string(w: &mut impl Write, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    Ok(w.write_all(s.as_bytes())?)
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the little-endian encoding of `values`.
pub fn digest_f64(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Raw SHA-256 of `bytes`.
pub(crate) fn sha256_raw(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}
