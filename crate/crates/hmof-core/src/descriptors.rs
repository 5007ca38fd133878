//! Per-patch motion descriptors.
//!
//! HMOF bins flow amplitudes into `n` half-open ranges calibrated from the
//! training set: bin i covers [(i-1)/n * delta, i/n * delta) and the last
//! bin absorbs everything above so test-time amplitudes always land
//! somewhere. HOF and MHOF are the orientation-histogram baselines.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{FlowField, MagnitudeMap};
use crate::frame::PatchGrid;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Hmof,
    Hof,
    Mhof,
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DescriptorKind::Hmof => write!(f, "hmof"),
            DescriptorKind::Hof => write!(f, "hof"),
            DescriptorKind::Mhof => write!(f, "mhof"),
        }
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmof" => Ok(DescriptorKind::Hmof),
            "hof" => Ok(DescriptorKind::Hof),
            "mhof" => Ok(DescriptorKind::Mhof),
            other => Err(Error::Config(format!(
                "unknown descriptor kind `{other}` (expected hmof, hof, or mhof)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HmofConfig {
    /// Bin count n.
    pub bins: usize,
    /// Magnitude threshold delta in pixels/frame.
    pub delta: f64,
    /// Fraction of the largest training magnitudes discarded during
    /// calibration.
    pub discard_fraction: f64,
}

impl HmofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::InvalidInput("histogram bin count must be >= 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta {} must be > 0",
                self.delta
            )));
        }
        if !(0.0..1.0).contains(&self.discard_fraction) {
            return Err(Error::InvalidInput(format!(
                "discard fraction {} outside [0, 1)",
                self.discard_fraction
            )));
        }
        Ok(())
    }
}

/// A normalized per-patch histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Fully-resolved descriptor settings for one pipeline run.
#[derive(Debug, Clone, Copy)]
pub enum DescriptorConfig {
    Hmof(HmofConfig),
    Hof { bins: usize },
    Mhof { bins: usize, m_thresh: f64 },
}

impl DescriptorConfig {
    pub fn kind(&self) -> DescriptorKind {
        match self {
            DescriptorConfig::Hmof(_) => DescriptorKind::Hmof,
            DescriptorConfig::Hof { .. } => DescriptorKind::Hof,
            DescriptorConfig::Mhof { .. } => DescriptorKind::Mhof,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            DescriptorConfig::Hmof(cfg) => cfg.bins,
            DescriptorConfig::Hof { bins } => *bins,
            DescriptorConfig::Mhof { bins, .. } => 2 * bins,
        }
    }
}

/// Sort ascending, discard the top ceil(fraction * N) values, and return
/// the maximum of the remainder.
pub fn calibrate_delta(magnitudes: &[f64], discard_fraction: f64) -> Result<f64> {
    if magnitudes.is_empty() {
        return Err(Error::InvalidInput(
            "delta calibration requires at least one magnitude".into(),
        ));
    }
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::InvalidInput(format!(
            "discard fraction {discard_fraction} outside [0, 1)"
        )));
    }
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite magnitude"));
    let discard = (discard_fraction * sorted.len() as f64).ceil() as usize;
    let keep = sorted.len().saturating_sub(discard);
    if keep == 0 {
        return Err(Error::InvalidInput(
            "delta calibration discarded every magnitude".into(),
        ));
    }
    let delta = sorted[keep - 1];
    if delta <= 0.0 {
        return Err(Error::InvalidInput(
            "degenerate training set: maximum remaining magnitude is 0".into(),
        ));
    }
    Ok(delta)
}

/// Index of the half-open magnitude bin containing `m` (0-based).
///
/// Walks the shared bin boundaries i * delta / n so assignment agrees
/// exactly with a per-interval membership scan.
#[inline]
pub fn magnitude_bin(m: f64, bins: usize, delta: f64) -> usize {
    for i in 1..bins {
        if m < (i as f64) * delta / (bins as f64) {
            return i - 1;
        }
    }
    bins - 1
}

/// Index of the direction sector containing atan2(v, u), sectors of width
/// 2*pi/n over [0, 2*pi) (0-based).
#[inline]
pub fn direction_sector(u: f64, v: f64, n_dir: usize) -> usize {
    let mut theta = v.atan2(u);
    if theta < 0.0 {
        theta += TAU;
    }
    for s in 1..n_dir {
        if theta < (s as f64) * TAU / (n_dir as f64) {
            return s - 1;
        }
    }
    n_dir - 1
}

/// Count-normalized amplitude histogram. Every pixel lands in exactly one
/// bin, so the vector always sums to 1 for a non-empty patch.
pub fn hmof(patch_magnitudes: &[f64], cfg: &HmofConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    if patch_magnitudes.is_empty() {
        return Err(Error::InvalidInput("empty patch".into()));
    }
    let mut counts = vec![0usize; cfg.bins];
    for &m in patch_magnitudes {
        counts[magnitude_bin(m, cfg.bins, cfg.delta)] += 1;
    }
    let norm = 1.0 / patch_magnitudes.len() as f64;
    Ok(FeatureVector {
        kind: DescriptorKind::Hmof,
        values: counts.iter().map(|&c| c as f64 * norm).collect(),
    })
}

/// Magnitude-weighted orientation histogram. A patch with no flow mass
/// yields the all-zero vector.
pub fn hof(patch_flow: &[(f64, f64)], n_dir: usize) -> Result<FeatureVector> {
    if n_dir == 0 {
        return Err(Error::InvalidInput("direction bin count must be >= 1".into()));
    }
    if patch_flow.is_empty() {
        return Err(Error::InvalidInput("empty patch".into()));
    }
    let mut values = vec![0f64; n_dir];
    let mut total = 0.0;
    for &(u, v) in patch_flow {
        let m = (u * u + v * v).sqrt();
        if m > 0.0 {
            values[direction_sector(u, v, n_dir)] += m;
            total += m;
        }
    }
    if total > 0.0 {
        for value in &mut values {
            *value /= total;
        }
    }
    Ok(FeatureVector {
        kind: DescriptorKind::Hof,
        values,
    })
}

/// Two-band orientation histogram: magnitudes below `m_thresh` fill
/// sectors 1..n, the rest fill sectors n+1..2n. Magnitude-weighted and
/// L1-normalized; zero total flow yields the zero vector.
pub fn mhof(patch_flow: &[(f64, f64)], n_dir: usize, m_thresh: f64) -> Result<FeatureVector> {
    if n_dir == 0 {
        return Err(Error::InvalidInput("direction bin count must be >= 1".into()));
    }
    if !(m_thresh > 0.0) {
        return Err(Error::InvalidInput(format!(
            "magnitude band threshold {m_thresh} must be > 0"
        )));
    }
    if patch_flow.is_empty() {
        return Err(Error::InvalidInput("empty patch".into()));
    }
    let mut values = vec![0f64; 2 * n_dir];
    let mut total = 0.0;
    for &(u, v) in patch_flow {
        let m = (u * u + v * v).sqrt();
        if m > 0.0 {
            let band = usize::from(m >= m_thresh);
            values[band * n_dir + direction_sector(u, v, n_dir)] += m;
            total += m;
        }
    }
    if total > 0.0 {
        for value in &mut values {
            *value /= total;
        }
    }
    Ok(FeatureVector {
        kind: DescriptorKind::Mhof,
        values,
    })
}

/// Flow amplitudes of one patch, in row-major patch order.
pub fn patch_magnitudes(map: &MagnitudeMap, grid: &PatchGrid, patch_id: usize) -> Result<Vec<f64>> {
    Ok(grid.pixels(patch_id)?.map(|(x, y)| map.at(x, y)).collect())
}

/// Flow vectors of one patch as f64 pairs, in row-major patch order.
pub fn patch_vectors(flow: &FlowField, grid: &PatchGrid, patch_id: usize) -> Result<Vec<(f64, f64)>> {
    Ok(grid
        .pixels(patch_id)?
        .map(|(x, y)| {
            let (u, v) = flow.at(x, y);
            (f64::from(u), f64::from(v))
        })
        .collect())
}

/// Descriptor of one patch from its raw flow vectors.
pub fn compute(patch_flow: &[(f64, f64)], cfg: &DescriptorConfig) -> Result<FeatureVector> {
    match cfg {
        DescriptorConfig::Hmof(c) => {
            let mags: Vec<f64> = patch_flow
                .iter()
                .map(|(u, v)| (u * u + v * v).sqrt())
                .collect();
            hmof(&mags, c)
        }
        DescriptorConfig::Hof { bins } => hof(patch_flow, *bins),
        DescriptorConfig::Mhof { bins, m_thresh } => mhof(patch_flow, *bins, *m_thresh),
    }
}

fn extract_one(
    flow: &FlowField,
    grid: &PatchGrid,
    patch_id: usize,
    cfg: &DescriptorConfig,
) -> Result<FeatureVector> {
    compute(&patch_vectors(flow, grid, patch_id)?, cfg)
}

/// Descriptors for a set of patches of one frame, in the order given.
pub fn extract_patches_seq(
    flow: &FlowField,
    grid: &PatchGrid,
    patch_ids: &[usize],
    cfg: &DescriptorConfig,
) -> Result<Vec<FeatureVector>> {
    patch_ids
        .iter()
        .map(|&id| extract_one(flow, grid, id, cfg))
        .collect()
}

pub fn extract_patches(
    flow: &FlowField,
    grid: &PatchGrid,
    patch_ids: &[usize],
    cfg: &DescriptorConfig,
) -> Result<Vec<FeatureVector>> {
    #[cfg(feature = "parallel")]
    {
        patch_ids
            .par_iter()
            .map(|&id| extract_one(flow, grid, id, cfg))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    extract_patches_seq(flow, grid, patch_ids, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_discards_top_fraction() {
        let mags: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(calibrate_delta(&mags, 0.05).unwrap(), 19.0);
    }

    #[test]
    fn delta_uniform_input() {
        let mags = vec![2.0; 50];
        assert_eq!(calibrate_delta(&mags, 0.05).unwrap(), 2.0);
    }

    #[test]
    fn delta_errors() {
        assert!(calibrate_delta(&[], 0.05).is_err());
        assert!(calibrate_delta(&[0.0, 0.0, 5.0], 0.5).is_err()); // remainder max is 0
        assert!(calibrate_delta(&[1.0], 0.99).is_err()); // everything discarded
        assert!(calibrate_delta(&[1.0], 1.0).is_err()); // fraction out of range
    }

    #[test]
    fn hmof_zero_motion_lands_in_first_bin() {
        let cfg = HmofConfig {
            bins: 8,
            delta: 1.0,
            discard_fraction: 0.05,
        };
        let fv = hmof(&[0.0; 16], &cfg).unwrap();
        assert_eq!(fv.values[0], 1.0);
        assert!(fv.values[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hmof_example_bins() {
        let cfg = HmofConfig {
            bins: 8,
            delta: 8.0,
            discard_fraction: 0.05,
        };
        let fv = hmof(&[0.5, 1.5, 9.0, 9.0], &cfg).unwrap();
        assert_eq!(fv.values, vec![0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn hmof_boundary_is_lower_inclusive() {
        // delta 8, n 8: bins are [0,1), [1,2), ... so exactly 1.0 -> bin 2.
        assert_eq!(magnitude_bin(1.0, 8, 8.0), 1);
        assert_eq!(magnitude_bin(0.0, 8, 8.0), 0);
        assert_eq!(magnitude_bin(7.0, 8, 8.0), 7);
        assert_eq!(magnitude_bin(1e9, 8, 8.0), 7);
    }

    #[test]
    fn hmof_rejects_empty_patch() {
        let cfg = HmofConfig {
            bins: 8,
            delta: 1.0,
            discard_fraction: 0.05,
        };
        assert!(hmof(&[], &cfg).is_err());
    }

    #[test]
    fn hof_single_vector_east() {
        let fv = hof(&[(1.0, 0.0)], 8).unwrap();
        assert_eq!(fv.values[0], 1.0);
        assert!(fv.values[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hof_two_perpendicular_vectors() {
        let fv = hof(&[(1.0, 0.0), (0.0, 1.0)], 8).unwrap();
        assert!((fv.values[0] - 0.5).abs() < 1e-12);
        assert!((fv.values[2] - 0.5).abs() < 1e-12);
        assert!((fv.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hof_zero_flow_gives_zero_vector() {
        let fv = hof(&[(0.0, 0.0); 4], 8).unwrap();
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mhof_band_split() {
        let low = mhof(&[(1.0, 0.0)], 8, 2.0).unwrap();
        assert_eq!(low.values[0], 1.0);
        let high = mhof(&[(3.0, 0.0)], 8, 2.0).unwrap();
        assert_eq!(high.values[8], 1.0);
        let both = mhof(&[(1.0, 0.0), (3.0, 0.0)], 8, 2.0).unwrap();
        assert!((both.values[0] - 0.25).abs() < 1e-12);
        assert!((both.values[8] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mhof_threshold_is_inclusive_high() {
        let fv = mhof(&[(2.0, 0.0)], 4, 2.0).unwrap();
        assert_eq!(fv.values[4], 1.0);
    }

    #[test]
    fn hmof_scale_invariance_on_duplication() {
        let cfg = HmofConfig {
            bins: 8,
            delta: 3.0,
            discard_fraction: 0.05,
        };
        let mags: Vec<f64> = (0..40).map(|i| (i as f64 * 0.17) % 4.0).collect();
        let doubled: Vec<f64> = mags.iter().chain(mags.iter()).copied().collect();
        assert_eq!(hmof(&mags, &cfg).unwrap(), hmof(&doubled, &cfg).unwrap());
    }

    #[test]
    fn hmof_rotation_invariant_hof_not() {
        let cfg = HmofConfig {
            bins: 8,
            delta: 3.0,
            discard_fraction: 0.05,
        };
        let flow: Vec<(f64, f64)> = vec![(1.0, 0.0), (2.0, 0.0), (0.5, 0.5)];
        // Exact quarter turn.
        let rotated: Vec<(f64, f64)> = flow.iter().map(|&(u, v)| (-v, u)).collect();
        let mags: Vec<f64> = flow.iter().map(|(u, v)| (u * u + v * v).sqrt()).collect();
        let rmags: Vec<f64> = rotated.iter().map(|(u, v)| (u * u + v * v).sqrt()).collect();
        assert_eq!(hmof(&mags, &cfg).unwrap(), hmof(&rmags, &cfg).unwrap());
        assert_ne!(hof(&flow, 8).unwrap(), hof(&rotated, 8).unwrap());
    }

    // Brute-force oracle: membership scan over the literal interval
    // definitions, independent of the production bin walk.
    fn magnitude_bin_oracle(m: f64, bins: usize, delta: f64) -> usize {
        for i in 1..=bins {
            let lower = (i - 1) as f64 * delta / bins as f64;
            let upper = i as f64 * delta / bins as f64;
            if i == bins {
                if m >= lower {
                    return i - 1;
                }
            } else if m >= lower && m < upper {
                return i - 1;
            }
        }
        unreachable!("magnitude {m} not covered by any bin")
    }

    fn direction_sector_oracle(u: f64, v: f64, n_dir: usize) -> usize {
        let mut theta = v.atan2(u);
        if theta < 0.0 {
            theta += TAU;
        }
        for s in 1..=n_dir {
            let lower = (s - 1) as f64 * TAU / n_dir as f64;
            let upper = s as f64 * TAU / n_dir as f64;
            if s == n_dir {
                if theta >= lower {
                    return s - 1;
                }
            } else if theta >= lower && theta < upper {
                return s - 1;
            }
        }
        unreachable!("angle {theta} not covered by any sector")
    }

    proptest! {
        #[test]
        fn magnitude_bin_matches_interval_scan(
            m in 0.0f64..20.0,
            bins in 1usize..16,
            delta in 0.1f64..10.0,
        ) {
            prop_assert_eq!(magnitude_bin(m, bins, delta), magnitude_bin_oracle(m, bins, delta));
        }

        #[test]
        fn direction_sector_matches_interval_scan(
            u in -5.0f64..5.0,
            v in -5.0f64..5.0,
            n in 1usize..16,
        ) {
            prop_assert_eq!(direction_sector(u, v, n), direction_sector_oracle(u, v, n));
        }

        #[test]
        fn hmof_always_sums_to_one(
            mags in proptest::collection::vec(0.0f64..10.0, 1..200),
            bins in 1usize..12,
            delta in 0.1f64..8.0,
        ) {
            let cfg = HmofConfig { bins, delta, discard_fraction: 0.05 };
            let fv = hmof(&mags, &cfg).unwrap();
            let sum: f64 = fv.values.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(fv.values.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn hof_mhof_sum_to_one_or_zero(
            flow in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..100),
            n in 1usize..12,
        ) {
            for fv in [hof(&flow, n).unwrap(), mhof(&flow, n, 1.5).unwrap()] {
                let sum: f64 = fv.values.iter().sum();
                prop_assert!(
                    (sum - 1.0).abs() < 1e-9 || sum == 0.0,
                    "sum was {sum}"
                );
            }
        }
    }
}
