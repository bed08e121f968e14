//! Little-endian primitives shared by the network and instance files.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn dim_to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::validation(format!("dimension {n} exceeds u32")))
}

/// Entries only, row-major; the shape is stored elsewhere.
pub fn write_matrix_data<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            write_f64(w, m[(i, j)])?;
        }
    }
    Ok(())
}

pub fn read_matrix_data<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Shape header (rows, cols as u32) followed by row-major entries.
pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    write_u32(w, dim_to_u32(m.nrows())?)?;
    write_u32(w, dim_to_u32(m.ncols())?)?;
    write_matrix_data(w, m)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    read_matrix_data(r, rows, cols)
}

pub fn write_vector<W: Write>(w: &mut W, v: &DVector<f64>) -> Result<()> {
    write_u32(w, dim_to_u32(v.len())?)?;
    for x in v.iter() {
        write_f64(w, *x)?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<DVector<f64>> {
    let n = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(read_f64(r)?);
    }
    Ok(DVector::from_vec(data))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}
