//! Middlebury `.flo` flow files.
//!
//! Layout: the sanity tag 202021.25 as a little-endian f32 (bytes "PIEH"),
//! then width and height as little-endian i32, then `H * W` interleaved
//! `(u, v)` f32 pairs in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::data::{FlowDirection, FlowField};
use crate::error::{Error, Result};

const FLO_TAG: f32 = 202021.25;
const MAX_SIDE: i32 = 1 << 20;

/// Read a `.flo` file. Flow files do not record their temporal direction,
/// so the caller supplies it (it is implied by the directory the file sits
/// in).
pub fn read_flo(path: &Path, direction: FlowDirection) -> Result<FlowField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let tag = read_f32(&mut r, path)?;
    if tag != FLO_TAG {
        return Err(Error::format(path, format!("bad magic {tag}, expected {FLO_TAG}")));
    }
    let w = read_i32(&mut r, path)?;
    let h = read_i32(&mut r, path)?;
    if w <= 0 || h <= 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::format(path, format!("implausible dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);

    let mut buf = vec![0u8; h * w * 2 * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after flow data"));
    }

    let mut vectors = Array3::zeros((2, h, w));
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 8;
            vectors[[0, y, x]] = f32::from_le_bytes(buf[base..base + 4].try_into().unwrap());
            vectors[[1, y, x]] = f32::from_le_bytes(buf[base + 4..base + 8].try_into().unwrap());
        }
    }
    FlowField::new(vectors, direction)
}

/// Write a flow field as a `.flo` file.
pub fn write_flo(field: &FlowField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    let (height, width) = (field.height(), field.width());
    w.write_all(&FLO_TAG.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(width as i32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(height as i32).to_le_bytes()).map_err(|e| Error::io(path, e))?;

    let mut buf = Vec::with_capacity(height * width * 8);
    for y in 0..height {
        for x in 0..width {
            buf.extend_from_slice(&field.vectors()[[0, y, x]].to_le_bytes());
            buf.extend_from_slice(&field.vectors()[[1, y, x]].to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_f32(r: &mut impl Read, path: &Path) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(f32::from_le_bytes(b))
}

fn read_i32(r: &mut impl Read, path: &Path) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(i32::from_le_bytes(b))
}
