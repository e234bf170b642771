//! Little-endian byte helpers shared by the checkpoint and index formats.

use std::fs::File;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{Error, Result};

pub(crate) const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Splits off and checks the trailing 8-byte CRC-64; returns the body.
pub(crate) fn verify_footer(buf: &[u8]) -> Result<&[u8]> {
    if buf.len() < 8 {
        return Err(Error::Corrupt("file too short for checksum footer".into()));
    }
    let (body, footer) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(footer.try_into().expect("8 bytes"));
    let actual = CRC64.checksum(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    Ok(body)
}

pub(crate) fn create_file(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Corrupt("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
