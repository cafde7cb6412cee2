//! Flat binary container of named `f64` arrays.
//!
//! ```text
//! magic    8 bytes  b"EQSSMCK\0"
//! version  u32 LE   currently 1
//! count    u32 LE   number of records
//! record*:
//!   name_len u32 LE, name (UTF-8)
//!   ndim     u32 LE, dims u64 LE x ndim
//!   data     f64 LE x prod(dims), row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EQSSMCK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, x: f64) -> Self {
        Self {
            name: name.into(),
            shape: vec![1],
            data: vec![x],
        }
    }

    /// Rank-1 records become column vectors, rank-2 records matrices.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape.as_slice() {
            [n] => Ok(DMatrix::from_column_slice(*n, 1, &self.data)),
            [r, c] => Ok(DMatrix::from_row_slice(*r, *c, &self.data)),
            s => Err(Error::Checkpoint(format!(
                "record `{}` has rank {}, expected 1 or 2",
                self.name,
                s.len()
            ))),
        }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let expected: usize = r.shape.iter().product();
        if expected != r.data.len() {
            return Err(Error::Checkpoint(format!(
                "record `{}` has {} values for shape {:?}",
                r.name,
                r.data.len(),
                r.shape
            )));
        }
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for d in &r.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in &r.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(Record { name, shape, data });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let bytes = fs::read(path)?;
    read_records(bytes.as_slice())
}
