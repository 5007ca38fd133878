//! Dense optical flow between consecutive frames and per-pixel magnitudes.
//!
//! The estimator is a global-smoothness fixed-point iteration: brightness
//! constancy plus a quadratic smoothness term, solved by damped Jacobi
//! sweeps. Jacobi (rather than in-place Gauss-Seidel) keeps the result
//! independent of row evaluation order, so the parallel and sequential
//! paths produce bit-identical fields.
//!
//! The linearized constancy term alone caps recoverable motion near the
//! object edge width, so the iteration budget is split across a few
//! re-linearization passes: each pass warps the next frame by the flow
//! accumulated so far and solves for the residual displacement.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::Frame;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    /// Fixed number of Jacobi sweeps.
    pub iterations: usize,
    /// Smoothness weight in normalized-intensity units; enters the update
    /// denominator squared.
    pub smoothness: f32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            iterations: 100,
            smoothness: 0.06,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("flow iterations must be >= 1".into()));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::InvalidInput("flow smoothness must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel motion vectors in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "flow field {}x{} with {} u and {} v values",
                width,
                height,
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("flow field contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Binary dump: width and height as little-endian u32, then the u grid
    /// and the v grid as little-endian f32.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 8 * self.u.len());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for value in self.u.iter().chain(self.v.iter()) {
            buf.extend_from_slice(&value.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut header = [0u8; 8];
        file.read_exact(&mut header)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let width = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let n = width * height;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if raw.len() != 8 * n {
            return Err(Error::InvalidInput(format!(
                "{}: expected {} flow bytes, found {}",
                path.display(),
                8 * n,
                raw.len()
            )));
        }
        let mut grids = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let u: Vec<f32> = grids.by_ref().take(n).collect();
        let v: Vec<f32> = grids.collect();
        FlowField::new(width, height, u, v)
    }
}

/// Per-pixel flow amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMap {
    width: usize,
    height: usize,
    m: Vec<f64>,
}

impl MagnitudeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.m[y * self.width + x]
    }
}

/// Elementwise Euclidean norm of the flow field.
pub fn magnitude(flow: &FlowField) -> MagnitudeMap {
    let m = flow
        .u
        .iter()
        .zip(&flow.v)
        .map(|(&u, &v)| {
            let (u, v) = (f64::from(u), f64::from(v));
            (u * u + v * v).sqrt()
        })
        .collect();
    MagnitudeMap {
        width: flow.width,
        height: flow.height,
        m,
    }
}

/// Re-linearization passes the iteration budget is split across.
const WARP_PASSES: usize = 3;

struct Gradients {
    ix: Vec<f32>,
    iy: Vec<f32>,
    it: Vec<f32>,
    /// 1 / (smoothness^2 + ix^2 + iy^2), hoisted out of the sweep loop.
    inv_denom: Vec<f32>,
}

/// Spatial derivatives by central differences on the frame average
/// (replicate-padded borders), temporal by forward difference.
fn gradients(prev: &[f32], next: &[f32], w: usize, h: usize, smoothness: f32) -> Gradients {
    let avg: Vec<f32> = prev.iter().zip(next).map(|(&a, &b)| 0.5 * (a + b)).collect();
    let mut ix = vec![0f32; w * h];
    let mut iy = vec![0f32; w * h];
    let mut it = vec![0f32; w * h];
    let mut inv_denom = vec![0f32; w * h];
    let alpha2 = smoothness * smoothness;
    for y in 0..h {
        let yn = y.saturating_sub(1);
        let ys = (y + 1).min(h - 1);
        for x in 0..w {
            let xw = x.saturating_sub(1);
            let xe = (x + 1).min(w - 1);
            let i = y * w + x;
            let gx = 0.5 * (avg[y * w + xe] - avg[y * w + xw]);
            let gy = 0.5 * (avg[ys * w + x] - avg[yn * w + x]);
            ix[i] = gx;
            iy[i] = gy;
            it[i] = next[i] - prev[i];
            inv_denom[i] = 1.0 / (alpha2 + gx * gx + gy * gy);
        }
    }
    Gradients {
        ix,
        iy,
        it,
        inv_denom,
    }
}

#[inline]
fn bilinear(grid: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = grid[y0 * w + x0] * (1.0 - fx) + grid[y0 * w + x1] * fx;
    let bottom = grid[y1 * w + x0] * (1.0 - fx) + grid[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Sample `next` at positions displaced by the accumulated flow.
fn warp(next: &[f32], w: usize, h: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out[i] = bilinear(next, w, h, x as f32 + u[i], y as f32 + v[i]);
        }
    }
    out
}

/// Jacobi sweeps per re-linearization pass; the remainder lands on the
/// earliest passes.
fn pass_iterations(total: usize, pass: usize) -> usize {
    total / WARP_PASSES + usize::from(pass < total % WARP_PASSES)
}

/// One Jacobi row update. Reads the full previous-iterate grids, writes one
/// output row; identical arithmetic on the sequential and parallel paths.
#[allow(clippy::too_many_arguments)]
fn update_row(
    y: usize,
    w: usize,
    h: usize,
    g: &Gradients,
    u: &[f32],
    v: &[f32],
    out_u: &mut [f32],
    out_v: &mut [f32],
) {
    let yn = y.saturating_sub(1);
    let ys = (y + 1).min(h - 1);
    let row = y * w;
    let north = yn * w;
    let south = ys * w;
    for x in 0..w {
        let xw = x.saturating_sub(1);
        let xe = (x + 1).min(w - 1);
        let ubar = 0.25 * (u[north + x] + u[south + x] + u[row + xw] + u[row + xe]);
        let vbar = 0.25 * (v[north + x] + v[south + x] + v[row + xw] + v[row + xe]);
        let i = row + x;
        let t = (g.ix[i] * ubar + g.iy[i] * vbar + g.it[i]) * g.inv_denom[i];
        out_u[x] = ubar - g.ix[i] * t;
        out_v[x] = vbar - g.iy[i] * t;
    }
}

fn check_dims(prev: &Frame, next: &Frame) -> Result<(usize, usize)> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::DimensionMismatch(format!(
            "flow inputs {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    Ok((prev.width(), prev.height()))
}

fn sweep_seq(g: &Gradients, w: usize, h: usize, iterations: usize) -> (Vec<f32>, Vec<f32>) {
    let n = w * h;
    let mut u = vec![0f32; n];
    let mut v = vec![0f32; n];
    let mut u_next = vec![0f32; n];
    let mut v_next = vec![0f32; n];
    for _ in 0..iterations {
        for y in 0..h {
            let (us, vs) = (&mut u_next[y * w..(y + 1) * w], &mut v_next[y * w..(y + 1) * w]);
            update_row(y, w, h, g, &u, &v, us, vs);
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    (u, v)
}

#[cfg(feature = "parallel")]
fn sweep_par(g: &Gradients, w: usize, h: usize, iterations: usize) -> (Vec<f32>, Vec<f32>) {
    let n = w * h;
    let mut u = vec![0f32; n];
    let mut v = vec![0f32; n];
    let mut u_next = vec![0f32; n];
    let mut v_next = vec![0f32; n];
    for _ in 0..iterations {
        let (u_ref, v_ref) = (&u, &v);
        u_next
            .par_chunks_mut(w)
            .zip(v_next.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (us, vs))| update_row(y, w, h, g, u_ref, v_ref, us, vs));
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    (u, v)
}

fn estimate_with(
    prev: &Frame,
    next: &Frame,
    cfg: &FlowConfig,
    sweep: impl Fn(&Gradients, usize, usize, usize) -> (Vec<f32>, Vec<f32>),
) -> Result<FlowField> {
    cfg.validate()?;
    let (w, h) = check_dims(prev, next)?;
    let n = w * h;
    let mut u_total = vec![0f32; n];
    let mut v_total = vec![0f32; n];
    for pass in 0..WARP_PASSES {
        let iterations = pass_iterations(cfg.iterations, pass);
        if iterations == 0 {
            continue;
        }
        let warped;
        let target: &[f32] = if pass == 0 {
            next.intensity()
        } else {
            warped = warp(next.intensity(), w, h, &u_total, &v_total);
            &warped
        };
        let g = gradients(prev.intensity(), target, w, h, cfg.smoothness);
        let (du, dv) = sweep(&g, w, h, iterations);
        for i in 0..n {
            u_total[i] += du[i];
            v_total[i] += dv[i];
        }
    }
    FlowField::new(w, h, u_total, v_total)
}

/// Sequential flow estimation; the reference path.
pub fn estimate_flow_seq(prev: &Frame, next: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    estimate_with(prev, next, cfg, sweep_seq)
}

/// Flow estimation; sweeps rows in parallel when the `parallel` feature is
/// enabled, with output identical to [`estimate_flow_seq`].
pub fn estimate_flow(prev: &Frame, next: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    #[cfg(feature = "parallel")]
    {
        estimate_with(prev, next, cfg, sweep_par)
    }
    #[cfg(not(feature = "parallel"))]
    estimate_flow_seq(prev, next, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_frame(w: usize, h: usize, index: usize, shift: usize) -> Frame {
        // Horizontal ramp over a wider parent so a right-shift by `shift`
        // stays in [0, 1]: content at x comes from parent coordinate
        // x + (max_shift - shift).
        let max_shift = 4;
        let c = 1.0 / (w + max_shift) as f32;
        let data: Vec<f32> = (0..h)
            .flat_map(|_| (0..w).map(move |x| (x + max_shift - shift) as f32 * c))
            .collect();
        Frame::new(w, h, index, data).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = ramp_frame(40, 30, 0, 0);
        let g = ramp_frame(40, 30, 1, 0);
        let flow = estimate_flow(&f, &g, &FlowConfig::default()).unwrap();
        for (&u, &v) in flow.u().iter().zip(flow.v()) {
            assert!(u.abs() < 1e-6 && v.abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_one_pixel_shift() {
        // Ground truth: the ramp content moves one pixel right per frame.
        let w = 64;
        let h = 48;
        let prev = ramp_frame(w, h, 0, 0);
        let next = ramp_frame(w, h, 1, 1);
        let cfg = FlowConfig {
            iterations: 400,
            smoothness: 0.06,
        };
        let flow = estimate_flow(&prev, &next, &cfg).unwrap();
        let mut sum_u = 0.0f64;
        let mut sum_av = 0.0f64;
        let mut count = 0usize;
        for y in 10..h - 10 {
            for x in 10..w - 10 {
                let (u, v) = flow.at(x, y);
                sum_u += f64::from(u);
                sum_av += f64::from(v.abs());
                count += 1;
            }
        }
        let mean_u = sum_u / count as f64;
        let mean_av = sum_av / count as f64;
        assert!(
            (mean_u - 1.0).abs() <= 0.3,
            "interior mean u = {mean_u}, expected 1.0 +/- 0.3"
        );
        assert!(mean_av < 0.2, "mean |v| = {mean_av}");
    }

    #[test]
    fn doubling_translation_roughly_doubles_magnitude() {
        let w = 64;
        let h = 48;
        let cfg = FlowConfig {
            iterations: 400,
            smoothness: 0.06,
        };
        let mean_mag = |shift: usize| {
            let prev = ramp_frame(w, h, 0, 0);
            let next = ramp_frame(w, h, 1, shift);
            let flow = estimate_flow(&prev, &next, &cfg).unwrap();
            let mag = magnitude(&flow);
            let mut sum = 0.0;
            let mut count = 0usize;
            for y in 10..h - 10 {
                for x in 10..w - 10 {
                    sum += mag.at(x, y);
                    count += 1;
                }
            }
            sum / count as f64
        };
        let m1 = mean_mag(1);
        let m2 = mean_mag(2);
        let ratio = m2 / m1;
        assert!(
            (ratio - 2.0).abs() <= 0.6,
            "magnitude ratio {ratio}, expected about 2"
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = ramp_frame(320, 240, 0, 0);
        let b = ramp_frame(100, 100, 1, 0);
        assert!(estimate_flow(&a, &b, &FlowConfig::default()).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let f = ramp_frame(8, 8, 0, 0);
        let bad_iters = FlowConfig {
            iterations: 0,
            smoothness: 1.0,
        };
        let bad_smooth = FlowConfig {
            iterations: 1,
            smoothness: 0.0,
        };
        assert!(estimate_flow(&f, &f, &bad_iters).is_err());
        assert!(estimate_flow(&f, &f, &bad_smooth).is_err());
    }

    #[test]
    fn magnitude_345() {
        let flow = FlowField::new(2, 1, vec![3.0, 0.0], vec![4.0, 0.0]).unwrap();
        let mag = magnitude(&flow);
        assert_eq!(mag.at(0, 0), 5.0);
        assert_eq!(mag.at(1, 0), 0.0);
    }

    #[test]
    fn magnitude_unit_diagonal() {
        let flow = FlowField::new(1, 1, vec![1.0], vec![1.0]).unwrap();
        let mag = magnitude(&flow);
        assert!((mag.at(0, 0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn magnitude_invariant_under_rotation() {
        let u: Vec<f32> = (0..50).map(|i| (i as f32 * 0.37).sin() * 3.0).collect();
        let v: Vec<f32> = (0..50).map(|i| (i as f32 * 0.51).cos() * 2.0).collect();
        let flow = FlowField::new(10, 5, u.clone(), v.clone()).unwrap();
        let base = magnitude(&flow);
        // Quarter turn is exact in f32: (u, v) -> (-v, u).
        let quarter = magnitude(
            &FlowField::new(10, 5, v.iter().map(|&b| -b).collect(), u.clone()).unwrap(),
        );
        for (a, b) in base.values().iter().zip(quarter.values()) {
            assert!((a - b).abs() < 1e-9, "quarter turn changed magnitude: {a} vs {b}");
        }
        // Arbitrary angles carry f32 rounding from the rotation itself.
        for angle in [0.3f32, 1.2, 2.9] {
            let (s, c) = angle.sin_cos();
            let ru: Vec<f32> = u.iter().zip(&v).map(|(&a, &b)| c * a - s * b).collect();
            let rv: Vec<f32> = u.iter().zip(&v).map(|(&a, &b)| s * a + c * b).collect();
            let rotated = magnitude(&FlowField::new(10, 5, ru, rv).unwrap());
            for (a, b) in base.values().iter().zip(rotated.values()) {
                assert!((a - b).abs() < 1e-6, "rotation changed magnitude: {a} vs {b}");
            }
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        let prev = ramp_frame(48, 36, 0, 0);
        let next = ramp_frame(48, 36, 1, 1);
        let cfg = FlowConfig {
            iterations: 50,
            smoothness: 0.06,
        };
        let a = estimate_flow_seq(&prev, &next, &cfg).unwrap();
        let b = estimate_flow(&prev, &next, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flow");
        let u: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let v: Vec<f32> = (0..12).map(|i| 2.0 - i as f32 * 0.125).collect();
        let flow = FlowField::new(4, 3, u, v).unwrap();
        flow.write_to(&path).unwrap();
        let back = FlowField::read_from(&path).unwrap();
        assert_eq!(flow, back);
    }
}
