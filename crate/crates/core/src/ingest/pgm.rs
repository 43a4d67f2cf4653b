//! Binary 16-bit PGM ("P5", maxval 65535, big-endian samples).

use std::fs;
use std::path::Path;

use super::{ThermalFrame, DEFAULT_PIXEL_PITCH_UM};
use crate::error::{Error, Result};

fn header_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Loads a frame with the default 5.6 µm pitch.
pub fn load_frame(path: &Path) -> Result<ThermalFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    if token(&bytes, &mut pos) != Some(b"P5") {
        return Err(header_error(path, "missing P5 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token(&bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| header_error(path, format!("invalid {what}")))
    };
    let cols = number("width")?;
    let rows = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 65535 {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            maxval: maxval as u32,
        });
    }
    if rows == 0 || cols == 0 {
        return Err(header_error(path, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(header_error(path, "missing separator before samples"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != rows * cols * 2 {
        return Err(header_error(
            path,
            format!("expected {} sample bytes, found {}", rows * cols * 2, data.len()),
        ));
    }
    let values = data
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    ThermalFrame::new(rows, cols, values, DEFAULT_PIXEL_PITCH_UM)
}

/// Writes a frame of integral counts; values are rounded and clipped to 16 bits.
pub fn save_frame(path: &Path, frame: &ThermalFrame) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.cols(), frame.rows()).into_bytes();
    out.reserve(frame.values().len() * 2);
    for &v in frame.values() {
        let c = v.round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&c.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
