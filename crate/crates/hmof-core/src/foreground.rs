//! Foreground weighting and patch selection.
//!
//! A running-average background model supplies per-pixel foreground
//! weights: the frame is read as a blend of foreground and background, and
//! the weight grows with the intensity deviation from the background.
//! Patches whose summed weighted intensity exceeds a threshold proceed
//! downstream; everything else is skipped.

use crate::error::{Error, Result};
use crate::frame::{Frame, PatchGrid};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Exponentially-updated per-pixel background intensity.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    width: usize,
    height: usize,
    values: Vec<f32>,
    learning_rate: f32,
}

impl BackgroundModel {
    /// Initialize from the first frame.
    pub fn new(frame: &Frame, learning_rate: f32) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "background learning rate {learning_rate} outside (0, 1]"
            )));
        }
        Ok(BackgroundModel {
            width: frame.width(),
            height: frame.height(),
            values: frame.intensity().to_vec(),
            learning_rate,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "background {}x{} vs frame {}x{}",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        Ok(())
    }

    /// B' = (1 - rate) * B + rate * I, elementwise.
    pub fn update(&mut self, frame: &Frame) -> Result<()> {
        self.check_frame(frame)?;
        let rate = self.learning_rate;
        let keep = 1.0 - rate;
        for (b, &i) in self.values.iter_mut().zip(frame.intensity()) {
            *b = keep * *b + rate * i;
        }
        Ok(())
    }
}

/// Per-pixel foreground weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    width: usize,
    height: usize,
    a: Vec<f32>,
}

impl AlphaMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.a
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.a[y * self.width + x]
    }

    /// Quantize to 8-bit samples for PGM export.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.a
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

#[inline]
fn alpha_value(intensity: f32, background: f32, inv_sensitivity: f32) -> f32 {
    ((intensity - background).abs() * inv_sensitivity).min(1.0)
}

/// a(p) = min(1, |I(p) - B(p)| / sensitivity).
pub fn estimate_alpha_seq(model: &BackgroundModel, frame: &Frame, sensitivity: f32) -> Result<AlphaMap> {
    if !(sensitivity > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha sensitivity {sensitivity} must be > 0"
        )));
    }
    model.check_frame(frame)?;
    let inv = 1.0 / sensitivity;
    let a = frame
        .intensity()
        .iter()
        .zip(&model.values)
        .map(|(&i, &b)| alpha_value(i, b, inv))
        .collect();
    Ok(AlphaMap {
        width: model.width,
        height: model.height,
        a,
    })
}

pub fn estimate_alpha(model: &BackgroundModel, frame: &Frame, sensitivity: f32) -> Result<AlphaMap> {
    #[cfg(feature = "parallel")]
    {
        if !(sensitivity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha sensitivity {sensitivity} must be > 0"
            )));
        }
        model.check_frame(frame)?;
        let inv = 1.0 / sensitivity;
        let w = model.width;
        let intensity = frame.intensity();
        let background = &model.values;
        let mut a = vec![0f32; w * model.height];
        a.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let offset = y * w;
            for (x, out) in row.iter_mut().enumerate() {
                *out = alpha_value(intensity[offset + x], background[offset + x], inv);
            }
        });
        Ok(AlphaMap {
            width: model.width,
            height: model.height,
            a,
        })
    }
    #[cfg(not(feature = "parallel"))]
    estimate_alpha_seq(model, frame, sensitivity)
}

/// Sum over patch pixels of a(p) * I(p): the composited foreground
/// intensity within the patch.
pub fn patch_foreground_value(
    alpha: &AlphaMap,
    frame: &Frame,
    grid: &PatchGrid,
    patch_id: usize,
) -> Result<f64> {
    if frame.width() != alpha.width || frame.height() != alpha.height {
        return Err(Error::DimensionMismatch(format!(
            "alpha {}x{} vs frame {}x{}",
            alpha.width,
            alpha.height,
            frame.width(),
            frame.height()
        )));
    }
    let mut sum = 0.0f64;
    for (x, y) in grid.pixels(patch_id)? {
        sum += f64::from(alpha.at(x, y)) * f64::from(frame.get(x, y));
    }
    Ok(sum)
}

/// Foreground value for every patch in grid order.
pub fn patch_foreground_values_seq(
    alpha: &AlphaMap,
    frame: &Frame,
    grid: &PatchGrid,
) -> Result<Vec<f64>> {
    grid.ids()
        .map(|id| patch_foreground_value(alpha, frame, grid, id))
        .collect()
}

pub fn patch_foreground_values(
    alpha: &AlphaMap,
    frame: &Frame,
    grid: &PatchGrid,
) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        if grid.is_empty() {
            return Ok(Vec::new());
        }
        (0..grid.len())
            .into_par_iter()
            .map(|id| patch_foreground_value(alpha, frame, grid, id))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    patch_foreground_values_seq(alpha, frame, grid)
}

/// Patches of one frame that passed the foreground threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelection {
    pub frame_index: usize,
    /// Selected patch ids, ascending.
    pub selected: Vec<usize>,
    /// Foreground value per grid patch, in grid order.
    pub values: Vec<f64>,
}

/// selected = { id : value(id) > tau }, strict inequality.
pub fn select_patches(frame_index: usize, values: &[f64], tau: f64) -> PatchSelection {
    let selected = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > tau)
        .map(|(id, _)| id)
        .collect();
    PatchSelection {
        frame_index,
        selected,
        values: values.to_vec(),
    }
}
