//! Frame-directory ingestion: PGM/PNG decode, glob filtering, ordering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

use super::pgm;

/// Shell-style glob match supporting `*` and `?`.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    // Iterative matcher with single-star backtracking.
    let (mut pi, mut ni) = (0usize, 0usize);
    let (mut star, mut mark) = (usize::MAX, 0usize);
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = pi;
            mark = ni;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            mark += 1;
            ni = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

fn decode(path: &Path, index: usize) -> Result<Frame> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => {
            let img = pgm::read(path)?;
            Frame::from_bytes(img.width, img.height, index, &img.data, img.maxval)
        }
        "png" => {
            let img = image::open(path).map_err(|e| Error::BadImage {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            let luma = img.to_luma8();
            Frame::from_bytes(
                luma.width() as usize,
                luma.height() as usize,
                index,
                luma.as_raw(),
                255,
            )
        }
        other => Err(Error::BadImage {
            path: path.to_path_buf(),
            detail: format!("unsupported extension `{other}` (expected pgm or png)"),
        }),
    }
}

/// Load every frame in `dir` whose filename matches `pattern`, ordered
/// lexicographically by filename.
pub fn load_sequence(dir: &Path, pattern: &str, fps: f64) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        if !entry.path().is_file() {
            continue;
        }
        if let Some(name) = entry.file_name().to_str() {
            if glob_match(pattern, name) {
                names.push(name.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::NoFramesMatched {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    names.sort();

    let mut frames = Vec::with_capacity(names.len());
    let mut dims: Option<(usize, usize)> = None;
    for (index, name) in names.iter().enumerate() {
        let frame = decode(&dir.join(name), index)?;
        match dims {
            None => dims = Some((frame.width(), frame.height())),
            Some((w, h)) => {
                if frame.width() != w || frame.height() != h {
                    return Err(Error::FrameDimensionMismatch {
                        name: name.clone(),
                        got_w: frame.width(),
                        got_h: frame.height(),
                        want_w: w,
                        want_h: h,
                    });
                }
            }
        }
        frames.push(frame);
    }
    FrameSequence::new(frames, fps)
}

/// Write a frame as an 8-bit binary PGM.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    pgm::write(path, frame.width(), frame.height(), &frame.to_bytes())
}
