//! Little-endian binary primitives shared by the checkpoint formats.
//!
//! Every file starts with a 4-byte magic and a `u32` version. Scalars are
//! always stored as `f64` so a checkpoint written with one element type can
//! be read with the other.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Scalar;

pub(crate) struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 4], version: u32) -> Result<Self> {
        inner.write_all(magic).map_err(io_err)?;
        inner.write_all(&version.to_le_bytes()).map_err(io_err)?;
        Ok(BinWriter { inner })
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes()).map_err(io_err)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes()).map_err(io_err)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.inner.write_all(s.as_bytes()).map_err(io_err)
    }

    pub fn scalars<T: Scalar>(&mut self, data: &[T]) -> Result<()> {
        self.u64(data.len() as u64)?;
        for &x in data {
            self.inner.write_all(&x.as_f64().to_le_bytes()).map_err(io_err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(io_err)?;
        Ok(self.inner)
    }
}

pub(crate) struct BinReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> BinReader<R> {
    /// Checks the magic and returns the reader with the stored version.
    pub fn new(inner: R, magic: &[u8; 4]) -> Result<(Self, u32)> {
        let mut r = BinReader { inner, offset: 0 };
        let mut m = [0u8; 4];
        r.fill(&mut m)?;
        if &m != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        Ok((r, version))
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            Error::Checkpoint(format!("truncated file: needed {} bytes at offset {}", buf.len(), self.offset))
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Checkpoint(format!("implausible length {n} at offset {}", self.offset - 8)));
        }
        Ok(n as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1 << 20)?;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }

    pub fn scalars<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.len(1 << 32)?;
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.fill(&mut b)?;
            out.push(T::lit(f64::from_le_bytes(b)));
        }
        Ok(out)
    }

    pub fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            _ => Err(Error::Checkpoint(format!("trailing bytes after offset {}", self.offset))),
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn write_matrix<T: Scalar, W: Write>(w: &mut BinWriter<W>, m: &Array2<T>) -> Result<()> {
    w.u64(m.nrows() as u64)?;
    w.u64(m.ncols() as u64)?;
    let data: Vec<T> = m.iter().copied().collect();
    w.scalars(&data)
}

pub(crate) fn read_matrix<T: Scalar, R: Read>(r: &mut BinReader<R>) -> Result<Array2<T>> {
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let data = r.scalars()?;
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|_| Error::Checkpoint(format!("matrix payload does not match {rows}x{cols}")))
}
