//! Minimal binary PGM (P5) reader/writer, 8-bit samples only.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::BadImage {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Pull the next whitespace-delimited token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
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
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(bytes[start..*pos].to_vec())
}

fn parse_number(path: &Path, token: Option<Vec<u8>>, what: &str) -> Result<usize> {
    let token = token.ok_or_else(|| bad(path, format!("truncated header: missing {what}")))?;
    std::str::from_utf8(&token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| bad(path, format!("invalid {what} in header")))
}

pub fn read(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut pos = 0;
    match next_token(&bytes, &mut pos) {
        Some(magic) if magic == b"P5" => {}
        _ => return Err(bad(path, "not a binary PGM (missing P5 magic)")),
    }
    let width = parse_number(path, next_token(&bytes, &mut pos), "width")?;
    let height = parse_number(path, next_token(&bytes, &mut pos), "height")?;
    let maxval = parse_number(path, next_token(&bytes, &mut pos), "maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(bad(path, format!("unsupported maxval {maxval} (8-bit only)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing raster separator"));
    }
    pos += 1;
    let expected = width * height;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(bad(
            path,
            format!("raster truncated: {} of {expected} bytes", data.len()),
        ));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u8,
        data: data[..expected].to_vec(),
    })
}

pub fn write(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), width * height, "raster size mismatch");
    let mut out = Vec::with_capacity(20 + data.len());
    write!(out, "P5\n{width} {height}\n255\n").expect("write to vec");
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<u8> = (0..=255).cycle().take(32 * 8).map(|v| v as u8).collect();
        write(&path, 32, 8, &data).unwrap();
        let img = read(&path).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (32, 8, 255));
        assert_eq!(img.data, data);
    }

    #[test]
    fn reads_header_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        fs::write(&path, bytes).unwrap();
        let img = read(&path).unwrap();
        assert_eq!(img.data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn rejects_non_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        fs::write(&path, b"P6\n2 2\n255\nxxxxxxxxxxxx").unwrap();
        let err = read(&path).unwrap_err();
        assert!(err.to_string().contains("P5"));
    }

    #[test]
    fn rejects_truncated_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        fs::write(&path, b"P5\n4 4\n255\nabc").unwrap();
        assert!(read(&path).is_err());
    }
}
