//! Little-endian helpers shared by the binary file formats.

use crate::error::{Error, Result};

/// Cursor over an in-memory file image that reports byte offsets on failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated payload: need {n} bytes for {what}, {} available",
                    self.remaining()
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        if self.remaining() < 4 || &self.buf[..4] != expected {
            let found = &self.buf[..self.buf.len().min(4)];
            return Err(Error::format(
                0,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(found)
                ),
            ));
        }
        self.pos = 4;
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let at = self.offset();
        let b = self.take(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    /// Reads `n` finite f32 values, widened to f64.
    pub fn f32_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset();
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::format(start, format!("{what} size overflows"))
        })?, what)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    Ok(f64::from(v))
                } else {
                    Err(Error::format(
                        start + 4 * i as u64,
                        format!("non-finite value in {what}"),
                    ))
                }
            })
            .collect()
    }

    /// Reads exactly `count` newline-terminated UTF-8 ids and requires the
    /// buffer to end right after them.
    pub fn id_block(&mut self, count: usize) -> Result<Vec<String>> {
        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            let rest = &self.buf[self.pos..];
            let Some(end) = rest.iter().position(|&b| b == b'\n') else {
                return Err(Error::format(
                    self.offset(),
                    format!("truncated payload: id block ends after {i} of {count} ids"),
                ));
            };
            let id = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::format(self.offset(), "id is not valid UTF-8"))?;
            ids.push(id.to_owned());
            self.pos += end + 1;
        }
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes after id block", self.remaining()),
            ));
        }
        Ok(ids)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub(crate) fn put_f32_block<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        put_f32(out, v);
    }
}

pub(crate) fn put_ids(out: &mut Vec<u8>, ids: &[String]) {
    for id in ids {
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in u32")))
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
