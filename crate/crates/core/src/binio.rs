//! Little-endian framing helpers shared by the checkpoint and episode formats.
//!
//! Layout: `magic | version: u32 | total_len: u64 | body | crc32: u32`, where
//! `total_len` counts every byte of the file and the CRC covers everything
//! before it. Checks run in that order so a newer file reports a version error,
//! a short file reports truncation, and flipped bits report a checksum error.

use std::path::Path;

use crate::error::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
    len_at: usize,
}

impl Writer {
    pub fn new(magic: &[u8], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new(), len_at: 0 };
        w.bytes(magic);
        w.u32(version);
        w.len_at = w.buf.len();
        w.u64(0);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
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
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// Appends the trailing checksum and returns the finished buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let total = (self.buf.len() + 4) as u64;
        self.buf[self.len_at..self.len_at + 8].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated { offset: self.pos, needed: self.pos + n - self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, FormatError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| FormatError::Malformed(format!("length {v} overflows")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FormatError::Malformed("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| FormatError::Malformed(format!("invalid utf-8: {e}")))
    }

    pub fn expect_end(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Validates the framing and returns a reader positioned at the body.
pub(crate) fn open_versioned<'a>(data: &'a [u8], magic: &[u8], expected: &'static str, version: u32) -> Result<Reader<'a>, FormatError> {
    let prefix = data.len().min(magic.len());
    if data[..prefix] != magic[..prefix] {
        return Err(FormatError::BadMagic { expected });
    }
    let header = magic.len() + 12;
    if data.len() < header + 4 {
        return Err(FormatError::Truncated { offset: data.len(), needed: header + 4 - data.len() });
    }
    let found = u32::from_le_bytes(data[magic.len()..magic.len() + 4].try_into().unwrap());
    if found != version {
        return Err(FormatError::VersionMismatch { found, expected: version });
    }
    let total = u64::from_le_bytes(data[magic.len() + 4..header].try_into().unwrap());
    let total = usize::try_from(total).map_err(|_| FormatError::Malformed("length overflow".into()))?;
    if data.len() < total {
        return Err(FormatError::Truncated { offset: data.len(), needed: total - data.len() });
    }
    if data.len() > total {
        return Err(FormatError::Malformed(format!("{} bytes after end of file", data.len() - total)));
    }
    let body = &data[..total - 4];
    let stored = u32::from_le_bytes(data[total - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(Reader { buf: body, pos: header })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_file(path: &Path, data: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, data).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}
