//! Frame-level and pixel-level evaluation: ROC sweeps, AUC, EER, and the
//! 40%-coverage pixel criterion.
//!
//! Score polarity follows the classifier: lower log-density means more
//! anomalous, so a sweep threshold t predicts abnormal for scores <= t.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::PatchGrid;
use crate::gmm::Verdict;

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_nonzero_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask bytes {} for {width}x{height}",
                bytes.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            bits: bytes.iter().map(|&b| b != 0).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    fn check_same_dims(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "masks {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Pixels set in both masks.
    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }
}

/// Union of the pixels of the given patches.
pub fn mask_from_patches(
    grid: &PatchGrid,
    patch_ids: &[usize],
    width: usize,
    height: usize,
) -> Result<Mask> {
    let mut mask = Mask::empty(width, height);
    for &id in patch_ids {
        for (x, y) in grid.pixels(id)? {
            if x < width && y < height {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Frame labels plus optional per-frame pixel masks.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: Vec<Verdict>,
    pub masks: Option<Vec<Mask>>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if let Some(masks) = &self.masks {
            if masks.len() != self.labels.len() {
                return Err(Error::GroundTruth(format!(
                    "{} masks for {} labels",
                    masks.len(),
                    self.labels.len()
                )));
            }
            for (i, mask) in masks.iter().enumerate() {
                if !mask.is_blank() && self.labels[i] == Verdict::Normal {
                    return Err(Error::GroundTruth(format!(
                        "frame {i} has anomalous pixels but is labeled normal"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep from (0,0) to (1,1); TPR and FPR are monotone
/// non-decreasing along the points.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Step-function evaluation: the point of the largest threshold <= t.
    pub fn at_threshold(&self, t: f64) -> (f64, f64) {
        let mut result = (0.0, 0.0);
        for p in &self.points {
            if p.threshold <= t {
                result = (p.fpr, p.tpr);
            } else {
                break;
            }
        }
        result
    }
}

/// Sweep a decision threshold over every distinct score. Lower scores are
/// more anomalous: at threshold t, frames with score <= t are predicted
/// abnormal.
pub fn roc(frame_scores: &[f64], labels: &[Verdict]) -> Result<RocCurve> {
    if frame_scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            frame_scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == Verdict::Abnormal).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "ROC needs both normal and abnormal frames".into(),
        ));
    }
    if frame_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN frame score".into()));
    }
    // Scores of +inf mark frames that never fire at any finite threshold
    // (e.g. fewer than beta scored patches); they are represented by the
    // conventional completion point at (1,1).
    let mut order: Vec<usize> = (0..frame_scores.len())
        .filter(|&i| frame_scores[i] < f64::INFINITY)
        .collect();
    order.sort_by(|&a, &b| frame_scores[a].partial_cmp(&frame_scores[b]).unwrap());

    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = frame_scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && frame_scores[order[i]] == threshold {
            match labels[order[i]] {
                Verdict::Abnormal => tp += 1,
                Verdict::Normal => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let last = points.last().expect("at least the origin point");
    if last.fpr < 1.0 || last.tpr < 1.0 {
        points.push(RocPoint {
            threshold: f64::INFINITY,
            fpr: 1.0,
            tpr: 1.0,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve over FPR in [0, 1].
pub fn auc(curve: &RocCurve) -> f64 {
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) * 0.5;
    }
    area
}

/// Equal error rate: the rate where FPR equals the miss rate 1 - TPR,
/// linearly interpolated between the two bracketing sweep points.
pub fn eer(curve: &RocCurve) -> f64 {
    // g = fpr - miss is monotone non-decreasing along the sweep, from -1
    // at (0,0) to +1 at (1,1).
    let g = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for (i, p) in curve.points.iter().enumerate() {
        let gi = g(p);
        if gi == 0.0 {
            return p.fpr;
        }
        if gi > 0.0 {
            if i == 0 {
                return p.fpr;
            }
            let prev = &curve.points[i - 1];
            let (f1, m1) = (prev.fpr, 1.0 - prev.tpr);
            let (f2, m2) = (p.fpr, 1.0 - p.tpr);
            let denom = (f2 - f1) - (m2 - m1);
            let t = (m1 - f1) / denom;
            return f1 + t * (f2 - f1);
        }
    }
    // Unreachable for a curve ending at (1,1); be conservative.
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelVerdict {
    TruePositive,
    Miss,
    FalseAlarm,
    TrueNegative,
}

/// 40%-coverage criterion: a detection counts only when at least 40% of
/// the ground-truth anomalous pixels are covered.
pub fn pixel_level_verdict(detected: &Mask, gt: &Mask) -> Result<PixelVerdict> {
    let covered = detected.intersection_count(gt)?;
    let gt_count = gt.count();
    if gt_count > 0 {
        // covered / gt_count >= 0.40, in exact integer arithmetic.
        if covered * 5 >= gt_count * 2 {
            Ok(PixelVerdict::TruePositive)
        } else {
            Ok(PixelVerdict::Miss)
        }
    } else if detected.count() > 0 {
        Ok(PixelVerdict::FalseAlarm)
    } else {
        Ok(PixelVerdict::TrueNegative)
    }
}

/// Per-frame patch scores as emitted by detection.
#[derive(Debug, Clone)]
pub struct FramePatchScores {
    pub frame_index: usize,
    /// (patch id, log-density score).
    pub scores: Vec<(usize, f64)>,
}

/// Smallest alpha at which this frame's detection mask would fire at all
/// (count >= beta), and smallest alpha at which it covers 40% of the
/// ground truth. Both are +inf when unreachable.
fn critical_alphas(
    frame: &FramePatchScores,
    gt_mask: &Mask,
    grid: &PatchGrid,
    beta: usize,
) -> Result<(f64, f64)> {
    let mut sorted = frame.scores.clone();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite patch score"));
    let fire_alpha = if sorted.len() >= beta {
        sorted[beta - 1].1
    } else {
        f64::INFINITY
    };
    let gt_count = gt_mask.count();
    if gt_count == 0 {
        return Ok((fire_alpha, f64::INFINITY));
    }
    // Grid patches are disjoint, so coverage accumulates additively as the
    // threshold admits more patches.
    let mut covered = 0usize;
    let mut cover_alpha = f64::INFINITY;
    for &(id, score) in &sorted {
        for (x, y) in grid.pixels(id)? {
            if x < gt_mask.width() && y < gt_mask.height() && gt_mask.get(x, y) {
                covered += 1;
            }
        }
        if covered * 5 >= gt_count * 2 {
            cover_alpha = score;
            break;
        }
    }
    Ok((fire_alpha, cover_alpha))
}

/// Pixel-level ROC: sweep the patch threshold, rebuild each frame's
/// detection mask (empty below beta abnormal patches), and count a
/// true positive only at 40% ground-truth coverage.
///
/// Frame verdicts are monotone in the threshold, so each frame reduces to
/// one critical threshold and the sweep is a frame-level ROC over those.
pub fn pixel_roc(
    frames: &[FramePatchScores],
    gt: &GroundTruth,
    grid: &PatchGrid,
    beta: usize,
) -> Result<RocCurve> {
    let masks = gt
        .masks
        .as_ref()
        .ok_or_else(|| Error::GroundTruth("pixel-level ROC requires masks".into()))?;
    if frames.len() != gt.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scored frames for {} ground-truth labels",
            frames.len(),
            gt.labels.len()
        )));
    }
    if beta == 0 {
        return Err(Error::InvalidInput("beta must be >= 1".into()));
    }
    let mut critical = Vec::with_capacity(frames.len());
    for (frame, mask) in frames.iter().zip(masks) {
        let (fire_alpha, cover_alpha) = critical_alphas(frame, mask, grid, beta)?;
        let label = gt.labels[frame.frame_index];
        critical.push(match label {
            // True positive once the mask fires and covers 40% of the GT.
            Verdict::Abnormal => fire_alpha.max(cover_alpha),
            // False alarm as soon as the mask fires at all.
            Verdict::Normal => fire_alpha,
        });
    }
    roc(&critical, &gt.labels)
}

/// Evaluation summary written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub auc_frame: f64,
    pub eer_frame: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer_pixel: Option<f64>,
    pub roc_frame: Vec<JsonRocPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_pixel: Option<Vec<JsonRocPoint>>,
    pub notes: Vec<String>,
}

/// ROC point for JSON export; non-finite thresholds are omitted rather
/// than serialized as null.
#[derive(Debug, Clone, Serialize)]
pub struct JsonRocPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

pub fn curve_to_json(curve: &RocCurve) -> Vec<JsonRocPoint> {
    curve
        .points
        .iter()
        .map(|p| JsonRocPoint {
            threshold: p.threshold.is_finite().then_some(p.threshold),
            fpr: p.fpr,
            tpr: p.tpr,
        })
        .collect()
}
