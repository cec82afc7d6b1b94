//! Little-endian binary helpers shared by the dataset and checkpoint formats.
//!
//! Container layout: 8 magic bytes, `u32` version, `u64` payload length,
//! payload, then the SHA-256 digest of everything before it.

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub(crate) const DIGEST_LEN: usize = 32;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    /// Wraps the payload in a header and checksum trailer.
    pub fn finish(self, magic: &[u8; 8], version: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.buf.len() + DIGEST_LEN);
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.buf.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.buf);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Validates magic, version, length and checksum, in that order, and
    /// returns a reader over the payload together with the version found.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 8],
        max_version: u32,
        what: &'static str,
    ) -> Result<(Self, u32)> {
        if bytes.len() < magic.len() {
            return Err(Error::Truncated(format!("{what}: missing header")));
        }
        if &bytes[..magic.len()] != magic {
            return Err(Error::Format(format!("{what}: bad magic bytes")));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!("{what}: incomplete header")));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version == 0 || version > max_version {
            return Err(Error::Version {
                found: version,
                supported: max_version,
            });
        }
        let payload_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let expected = usize::try_from(payload_len)
            .ok()
            .and_then(|p| p.checked_add(HEADER_LEN + DIGEST_LEN))
            .ok_or_else(|| Error::Format(format!("{what}: payload length {payload_len} overflows")))?;
        if bytes.len() < expected {
            return Err(Error::Truncated(format!(
                "{what}: expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{what}: {} unexpected trailing bytes",
                bytes.len() - expected
            )));
        }
        let (body, trailer) = bytes.split_at(expected - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checksum(what.to_string()));
        }
        Ok((
            Self {
                buf: &body[HEADER_LEN..],
                pos: 0,
                what,
            },
            version,
        ))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(format!(
                "{}: needed {n} bytes at offset {}",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{}: size {v} overflows", self.what)))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Format(format!("{}: length {n} overflows", self.what))
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
