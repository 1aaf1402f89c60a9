//! Checksummed binary framing shared by dataset and checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic[4] | version u32 | payload_len u64 | payload | sha256(magic..payload)[32]
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const HEADER_LEN: usize = 4 + 4 + 8;
const DIGEST_LEN: usize = 32;

pub fn write_file(path: &Path, magic: &[u8; 4], version: u32, payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

/// Reads and verifies a framed file, returning its payload.
pub fn read_file(path: &Path, magic: &[u8; 4], version: u32) -> Result<Vec<u8>> {
    let buf = fs::read(path)?;
    let fmt_err = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if buf.len() < HEADER_LEN + DIGEST_LEN {
        return Err(fmt_err("file truncated"));
    }
    if &buf[..4] != magic {
        return Err(fmt_err("bad magic"));
    }
    let body_end = buf.len() - DIGEST_LEN;
    if Sha256::digest(&buf[..body_end]).as_slice() != &buf[body_end..] {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let found = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found,
            expected: version,
        });
    }
    let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if HEADER_LEN + len != body_end {
        return Err(fmt_err("payload length does not match file size"));
    }
    Ok(buf[HEADER_LEN..body_end].to_vec())
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
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

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: "payload truncated".into(),
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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.format_error("invalid utf-8 string"))
    }

    pub fn format_error(&self, detail: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(self.format_error("trailing bytes after payload"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_file(&path, b"TEST", 3, b"hello").unwrap();
        assert_eq!(read_file(&path, b"TEST", 3).unwrap(), b"hello");

        assert!(matches!(
            read_file(&path, b"TEST", 4),
            Err(Error::Version { found: 3, .. })
        ));

        let mut bytes = fs::read(&path).unwrap();
        bytes[18] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_file(&path, b"TEST", 3), Err(Error::Checksum(_))));

        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(read_file(&path, b"TEST", 3), Err(Error::Format { .. })));
    }
}
