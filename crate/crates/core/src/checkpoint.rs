//! Versioned binary container for model and optimizer tensors.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic    4 bytes  "SSRM"
//! version  u32      currently 1
//! dtype    u8       0 = f32, 1 = f64
//! config   u32 byte length, then a UTF-8 key=value block
//! count    u32      number of tensors
//! tensor*  u32 name length, name bytes, u64 rows, u64 cols,
//!          rows*cols scalars in row-major little-endian order
//! ```
//!
//! Files are written atomically (temp file + rename). Loading refuses a
//! dtype other than the one requested — precision is part of the training
//! run's identity, not something to convert silently.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::mat::Mat;
use crate::scalar::{Dtype, Scalar};

const MAGIC: &[u8; 4] = b"SSRM";
const VERSION: u32 = 1;

fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

fn dtype_from_code(c: u8) -> Option<Dtype> {
    match c {
        0 => Some(Dtype::F32),
        1 => Some(Dtype::F64),
        _ => None,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                msg: format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            msg: "string field is not valid UTF-8".into(),
        })
    }
}

/// Serializes named tensors with a config echo and writes them atomically.
pub fn write_tensors<T: Scalar>(
    path: &Path,
    config_echo: &str,
    tensors: &[(&str, &Mat<T>)],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code(T::DTYPE));
    out.extend_from_slice(&(config_echo.len() as u32).to_le_bytes());
    out.extend_from_slice(config_echo.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, mat) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(mat.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(mat.cols() as u64).to_le_bytes());
        for &v in mat.data() {
            v.write_le(&mut out);
        }
    }
    atomic_write(path, &out)
}

fn read_header<'a>(reader: &mut Reader<'a>) -> Result<(Dtype, String)> {
    let magic = reader.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format {
            path: reader.path.to_path_buf(),
            msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            path: reader.path.to_path_buf(),
            msg: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let code = reader.u8()?;
    let dtype = dtype_from_code(code).ok_or_else(|| Error::Format {
        path: reader.path.to_path_buf(),
        msg: format!("unknown dtype code {code}"),
    })?;
    let config_echo = reader.string()?;
    Ok((dtype, config_echo))
}

/// Reads only the header: the stored dtype and the config echo.
pub fn peek(path: &Path) -> Result<(Dtype, String)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader { buf: &buf, pos: 0, path };
    read_header(&mut reader)
}

/// Loads all tensors, requiring the stored dtype to match `T`.
pub fn read_tensors<T: Scalar>(path: &Path) -> Result<(String, Vec<(String, Mat<T>)>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader { buf: &buf, pos: 0, path };
    let (dtype, config_echo) = read_header(&mut reader)?;
    if dtype != T::DTYPE {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("stores {} tensors but {} was requested", dtype, T::DTYPE),
        });
    }
    let count = reader.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = reader.string()?;
        let rows = reader.u64()? as usize;
        let cols = reader.u64()? as usize;
        let bytes = reader.take(rows * cols * T::BYTES)?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in bytes.chunks_exact(T::BYTES) {
            data.push(T::read_le(chunk));
        }
        tensors.push((name, Mat::from_vec(rows, cols, data)));
    }
    if reader.pos != buf.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes after the last tensor", buf.len() - reader.pos),
        });
    }
    Ok((config_echo, tensors))
}
