//! Offset-tracking binary reads shared by the model and dataset loaders.
//!
//! Every read failure is reported as a format error carrying the file path
//! and the byte offset at which the read started, so a truncated or
//! corrupted file points straight at the damage.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub(crate) struct ByteReader<R: Read> {
    inner: R,
    path: PathBuf,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        ByteReader {
            inner,
            path: path.to_path_buf(),
            offset: 0,
        }
    }

    pub fn format_error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.offset,
            message: message.into(),
        }
    }

    /// Fills `buf` completely or reports a format error at the current offset.
    pub fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(self.format_error(
                format!("unexpected end of file while reading {what}"),
            )),
            Err(e) => Err(Error::Io(e)),
        }
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, what)?;
        Ok(b[0])
    }

    pub fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_be_bytes(b))
    }

    pub fn read_u32_le(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_f64_le(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Confirms the stream is exhausted; anything left is a format error.
    pub fn expect_eof(&mut self, what: &str) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.format_error(format!("trailing bytes after {what}"))),
            Err(e) => Err(Error::Io(e)),
        }
    }
}
