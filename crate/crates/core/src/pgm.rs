//! Binary PGM (P5) encoding with 16-bit big-endian samples, the frame
//! format of on-disk fingerprints.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAXVAL: u32 = 65_535;

/// Encode a row-major 16-bit grid as a P5 PGM with maxval 65535.
pub fn encode(width: usize, height: usize, data: &[u16]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::invalid(format!(
            "pgm data length {} does not match {width}x{height}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(32 + data.len() * 2);
    write!(out, "P5\n{width} {height}\n{MAXVAL}\n").expect("writing to Vec cannot fail");
    for &v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Decode a P5 PGM with maxval 65535 into (width, height, samples).
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0usize;

    let err = |message: String| Error::format(origin, message);

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err("not a P5 PGM".into()));
    }
    pos += 2;

    // Header tokens are separated by whitespace; '#' starts a comment that
    // runs to end of line.
    let next_token = |pos: &mut usize| -> Result<usize> {
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
        if start == *pos {
            return Err(Error::format(origin, "truncated PGM header".to_string()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(origin, "malformed PGM header token".to_string()))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval != MAXVAL as usize {
        return Err(err(format!("expected maxval {MAXVAL}, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(err(format!("degenerate dimensions {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing raster separator".into()));
    }
    pos += 1;

    let expected = width * height * 2;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(err(format!(
            "raster holds {} bytes, expected {expected} for {width}x{height}",
            raster.len()
        )));
    }
    let data = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, data))
}

/// Write a 16-bit grid to `path` as P5 PGM.
pub fn write_file(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let bytes = encode(width, height, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a P5 PGM from `path`.
pub fn read_file(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
