//! Contour CSV and signed-distance grid files.
//!
//! Grid files are a 16-byte header (`MPSD`, version, rows, cols as
//! little-endian `u32`) followed by `rows * cols` little-endian `f32` values in
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GridSpec, MeltPoolContour, Point, SdfGrid};
use crate::error::{Error, Result};

pub const SDF_FILE_VERSION: u32 = 1;
const SDF_MAGIC: &[u8; 4] = b"MPSD";

#[derive(Serialize, Deserialize)]
struct ContourRow {
    x_um: f64,
    depth_um: f64,
}

pub fn write_contour_csv(path: &Path, contour: &MeltPoolContour) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in contour.points() {
        w.serialize(ContourRow {
            x_um: p.x,
            depth_um: p.d,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_contour_csv(path: &Path) -> Result<MeltPoolContour> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x_um", "depth_um"] {
        return Err(Error::validation(format!(
            "{}: expected header x_um,depth_um",
            path.display()
        )));
    }
    let points = r
        .deserialize::<ContourRow>()
        .map(|row| row.map(|row| Point::new(row.x_um, row.depth_um)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    MeltPoolContour::new(points)
}

pub fn write_sdf_file(path: &Path, sdf: &SdfGrid) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let spec = sdf.spec();
    let io = |e| Error::io(path, e);
    w.write_all(SDF_MAGIC).map_err(io)?;
    w.write_all(&SDF_FILE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(spec.rows as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(spec.cols as u32).to_le_bytes()).map_err(io)?;
    for &v in sdf.values() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a grid file. Pixel pitch and truncation are not stored in the file
/// and come from `spec`/`truncation_um`; the stored shape must match `spec`.
pub fn read_sdf_file(path: &Path, spec: &GridSpec, truncation_um: f64) -> Result<SdfGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != SDF_MAGIC {
        return Err(Error::validation(format!("{}: not an MPSD file", path.display())));
    }
    let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().expect("4 bytes"));
    let (version, rows, cols) = (word(4), word(8) as usize, word(12) as usize);
    if version != SDF_FILE_VERSION {
        return Err(Error::validation(format!(
            "{}: unsupported MPSD version {version}",
            path.display()
        )));
    }
    if rows != spec.rows || cols != spec.cols {
        return Err(Error::ShapeMismatch {
            expected: vec![spec.rows, spec.cols],
            actual: vec![rows, cols],
        });
    }
    let mut bytes = vec![0u8; rows * cols * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    SdfGrid::from_values(*spec, truncation_um, values)
}
