//! Deterministic synthetic sequences with planted magnitude anomalies and
//! exact ground truth. Bright rectangles drift over a dark background with
//! wraparound; anomaly movers share the normal movers' appearance and
//! differ only in speed, so the scenario is separable by flow magnitude
//! alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Mask};
use crate::frame::{Frame, FrameSequence};
use crate::gmm::Verdict;

const BACKGROUND_LEVEL: f32 = 0.05;
const MOVER_BASE: f32 = 0.55;
const MOVER_AMPLITUDE: f32 = 0.3;

/// Smooth intensity pattern rigidly attached to a mover. Flat squares have
/// no interior gradients and defeat any gradient-based flow estimator, so
/// movers carry one sinusoidal period of texture; the dimmest texel still
/// sits well above the background.
fn mover_texture(dx: usize, dy: usize, size: usize) -> f32 {
    let tau = std::f32::consts::TAU;
    let fx = (tau * dx as f32 / size as f32).sin();
    let fy = (tau * dy as f32 / size as f32).cos();
    MOVER_BASE + MOVER_AMPLITUDE * fx * fy
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub normal_movers: usize,
    /// Speed range (pixels/frame) for normal movers.
    pub normal_speed: (f64, f64),
    pub anomaly_movers: usize,
    /// Speed range for anomaly movers; must sit strictly above the normal
    /// range.
    pub anomaly_speed: (f64, f64),
    /// Inclusive frame window in which anomaly movers exist.
    pub anomaly_window: (usize, usize),
    /// Square mover edge in pixels.
    pub object_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 320,
            height: 240,
            frames: 400,
            seed: 9,
            normal_movers: 6,
            normal_speed: (0.5, 1.5),
            anomaly_movers: 2,
            anomaly_speed: (4.0, 6.0),
            anomaly_window: (250, 350),
            object_size: 16,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::InvalidInput(format!(
                "degenerate synthetic dims {}x{} x {} frames",
                self.width, self.height, self.frames
            )));
        }
        if self.object_size == 0 || self.object_size > self.width.min(self.height) {
            return Err(Error::InvalidInput(format!(
                "object size {} does not fit {}x{}",
                self.object_size, self.width, self.height
            )));
        }
        for (lo, hi) in [self.normal_speed, self.anomaly_speed] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidInput(format!(
                    "bad speed range {lo}..{hi}"
                )));
            }
        }
        if self.anomaly_movers > 0 {
            if !(self.anomaly_speed.0 > self.normal_speed.1) {
                return Err(Error::InvalidInput(format!(
                    "anomaly speeds {}..{} must sit strictly above normal speeds {}..{}",
                    self.anomaly_speed.0,
                    self.anomaly_speed.1,
                    self.normal_speed.0,
                    self.normal_speed.1
                )));
            }
            let (start, end) = self.anomaly_window;
            if start > end || end >= self.frames {
                return Err(Error::InvalidInput(format!(
                    "anomaly window {start}..{end} outside sequence of {} frames",
                    self.frames
                )));
            }
        }
        Ok(())
    }
}

struct Mover {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig, speed: (f64, f64)) -> Self {
        let x = rng.random_range(0.0..cfg.width as f64);
        let y = rng.random_range(0.0..cfg.height as f64);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(speed.0..=speed.1);
        Mover {
            x,
            y,
            vx: angle.cos() * speed,
            vy: angle.sin() * speed,
        }
    }

    fn advance(&mut self, width: f64, height: f64) {
        self.x = (self.x + self.vx).rem_euclid(width);
        self.y = (self.y + self.vy).rem_euclid(height);
    }

    /// Rasterize with wraparound; the same loop paints frames and masks so
    /// the ground truth is exact by construction. The paint closure sees
    /// the frame pixel and its mover-local offset.
    fn rasterize(&self, cfg: &SynthConfig, mut paint: impl FnMut(usize, usize, usize, usize)) {
        let x0 = self.x.floor() as isize;
        let y0 = self.y.floor() as isize;
        for dy in 0..cfg.object_size as isize {
            for dx in 0..cfg.object_size as isize {
                let px = (x0 + dx).rem_euclid(cfg.width as isize) as usize;
                let py = (y0 + dy).rem_euclid(cfg.height as isize) as usize;
                paint(px, py, dx as usize, dy as usize);
            }
        }
    }
}

/// Generated sequence with exact per-frame labels and pixel masks.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sequence: FrameSequence,
    pub ground_truth: GroundTruth,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal: Vec<Mover> = (0..cfg.normal_movers)
        .map(|_| Mover::random(&mut rng, cfg, cfg.normal_speed))
        .collect();
    // Anomaly movers are drawn up front so frame content before the window
    // does not depend on whether anomalies are enabled.
    let mut anomalies: Vec<Mover> = (0..cfg.anomaly_movers)
        .map(|_| Mover::random(&mut rng, cfg, cfg.anomaly_speed))
        .collect();

    let (window_start, window_end) = cfg.anomaly_window;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    for frame_index in 0..cfg.frames {
        let in_window = cfg.anomaly_movers > 0
            && frame_index >= window_start
            && frame_index <= window_end;
        let mut data = vec![BACKGROUND_LEVEL; cfg.width * cfg.height];
        let mut mask = Mask::empty(cfg.width, cfg.height);
        let size = cfg.object_size;
        // Overlaps blend by max so paint order does not matter.
        for mover in &normal {
            mover.rasterize(cfg, |x, y, dx, dy| {
                let cell = &mut data[y * cfg.width + x];
                *cell = cell.max(mover_texture(dx, dy, size));
            });
        }
        if in_window {
            for mover in &anomalies {
                mover.rasterize(cfg, |x, y, dx, dy| {
                    let cell = &mut data[y * cfg.width + x];
                    *cell = cell.max(mover_texture(dx, dy, size));
                    mask.set(x, y, true);
                });
            }
        }
        frames.push(Frame::new(cfg.width, cfg.height, frame_index, data)?);
        labels.push(if in_window {
            Verdict::Abnormal
        } else {
            Verdict::Normal
        });
        masks.push(mask);

        for mover in &mut normal {
            mover.advance(cfg.width as f64, cfg.height as f64);
        }
        if cfg.anomaly_movers > 0 && frame_index >= window_start && frame_index < window_end {
            for mover in &mut anomalies {
                mover.advance(cfg.width as f64, cfg.height as f64);
            }
        }
    }
    let ground_truth = GroundTruth {
        labels,
        masks: Some(masks),
    };
    ground_truth.validate()?;
    Ok(SynthOutput {
        sequence: FrameSequence::new(frames, 10.0)?,
        ground_truth,
    })
}
