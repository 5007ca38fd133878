//! Frames, frame sequences, and the fixed non-overlapping patch grid that
//! every downstream stage indexes into.

use crate::error::{Error, Result};

/// A single grayscale frame with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    index: usize,
    intensity: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, intensity: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "frame {index}: zero dimension {width}x{height}"
            )));
        }
        if intensity.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame {index}: {} intensities for {width}x{height}",
                intensity.len()
            )));
        }
        if intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "frame {index}: intensity outside [0,1]"
            )));
        }
        Ok(Frame {
            width,
            height,
            index,
            intensity,
        })
    }

    /// Build a frame from 8-bit samples scaled by `maxval`.
    pub fn from_bytes(
        width: usize,
        height: usize,
        index: usize,
        bytes: &[u8],
        maxval: u8,
    ) -> Result<Self> {
        let scale = 1.0 / f32::from(maxval);
        let intensity = bytes.iter().map(|&b| f32::from(b) * scale).collect();
        Frame::new(width, height, index, intensity)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.intensity[y * self.width + x]
    }

    /// Quantize back to 8-bit samples (maxval 255).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.intensity
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// An ordered, dimension-uniform list of frames.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if let Some(first) = frames.first() {
            let (w, h) = (first.width(), first.height());
            for f in &frames {
                if f.width() != w || f.height() != h {
                    return Err(Error::FrameDimensionMismatch {
                        name: format!("{}", f.index()),
                        got_w: f.width(),
                        got_h: f.height(),
                        want_w: w,
                        want_h: h,
                    });
                }
            }
        }
        for (i, f) in frames.iter().enumerate() {
            if f.index() != i {
                return Err(Error::InvalidInput(format!(
                    "frame indices not consecutive: expected {i}, found {}",
                    f.index()
                )));
            }
        }
        Ok(FrameSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, Frame::width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, Frame::height)
    }
}

/// Fixed tiling of a frame into non-overlapping square patches.
///
/// Pixels in the right/bottom remainder strip belong to no patch when the
/// frame dimensions are not multiples of `patch_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    patch_size: usize,
    rows: usize,
    cols: usize,
}

impl PatchGrid {
    pub fn partition(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidInput("patch size must be positive".into()));
        }
        if patch_size > width || patch_size > height {
            return Err(Error::InvalidInput(format!(
                "patch size {patch_size} exceeds frame dimensions {width}x{height}"
            )));
        }
        Ok(PatchGrid {
            patch_size,
            rows: height / patch_size,
            cols: width / patch_size,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of patches in the grid.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> {
        0..self.len()
    }

    pub fn contains(&self, patch_id: usize) -> bool {
        patch_id < self.len()
    }

    /// Top-left pixel coordinate of a patch.
    pub fn origin(&self, patch_id: usize) -> Result<(usize, usize)> {
        if !self.contains(patch_id) {
            return Err(Error::InvalidInput(format!(
                "patch id {patch_id} out of range (grid has {} patches)",
                self.len()
            )));
        }
        let row = patch_id / self.cols;
        let col = patch_id % self.cols;
        Ok((col * self.patch_size, row * self.patch_size))
    }

    /// Row-major pixel coordinates covered by a patch.
    pub fn pixels(&self, patch_id: usize) -> Result<impl Iterator<Item = (usize, usize)>> {
        let (x0, y0) = self.origin(patch_id)?;
        let size = self.patch_size;
        Ok((0..size).flat_map(move |dy| (0..size).map(move |dx| (x0 + dx, y0 + dy))))
    }
}
