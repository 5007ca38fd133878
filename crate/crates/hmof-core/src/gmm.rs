//! Gaussian mixture classifier: EM maximum-likelihood fitting on training
//! latents, log-density scoring, and the patch/frame decision rules.
//!
//! A patch is abnormal when its log-density falls to the threshold alpha or
//! below; a frame is abnormal when at least beta of its patches are.

use std::io::Read;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const MODEL_MAGIC: &[u8; 4] = b"HMGM";
const MODEL_VERSION: u32 = 1;
const LN_TAU: f64 = 1.837877066409345483560659472811; // ln(2*pi)
/// Mixture weights below this trigger component reinitialization.
const COLLAPSE_WEIGHT: f64 = 1e-8;

/// Binary decision shared by the classifier and the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Normal,
    Abnormal,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Normal => write!(f, "normal"),
            Verdict::Abnormal => write!(f, "abnormal"),
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Verdict::Normal),
            "abnormal" => Ok(Verdict::Abnormal),
            other => Err(Error::InvalidInput(format!(
                "unknown label `{other}` (expected normal or abnormal)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    /// Diagonal regularizer added to every covariance during fitting; kept
    /// as metadata, already folded into the stored covariances.
    reg: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EmSettings {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub reg: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            components: 5,
            seed: 1,
            max_iters: 200,
            tol: 1e-6,
            reg: 1e-2,
        }
    }
}

/// Fit outcome with the accepted log-likelihood trace (one entry per
/// E-step, starting at the initial parameters).
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: GmmModel,
    pub log_likelihoods: Vec<f64>,
    /// Iterations (1-based trace indices) at which a collapsed component
    /// was reinitialized; the monotonicity baseline resets there.
    pub rescues: Vec<usize>,
    pub converged: bool,
}

/// Patch and frame decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionThresholds {
    /// Patch log-density threshold.
    pub alpha: f64,
    /// Minimum abnormal-patch count for an abnormal frame.
    pub beta: usize,
}

impl DecisionThresholds {
    pub fn new(alpha: f64, beta: usize) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha {alpha} must be finite")));
        }
        if beta == 0 {
            return Err(Error::InvalidInput("beta must be >= 1".into()));
        }
        Ok(DecisionThresholds { alpha, beta })
    }
}

/// Per-frame decision: which patches scored abnormal and the frame score
/// used for ROC sweeps (the beta-th smallest patch score, +inf when fewer
/// than beta patches were scored).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecision {
    pub frame_index: usize,
    pub abnormal_patches: Vec<usize>,
    pub verdict: Verdict,
    pub frame_score: f64,
}

impl FrameDecision {
    pub fn abnormal_count(&self) -> usize {
        self.abnormal_patches.len()
    }
}

fn cholesky_of(cov: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(cov.clone())
}

/// Log multivariate normal density via a Cholesky factor.
fn log_normal(chol: &Cholesky<f64, Dyn>, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let dim = mean.len() as f64;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let quadratic = diff.dot(&solved);
    let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (dim * LN_TAU + ln_det + quadratic)
}

impl GmmModel {
    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        reg: f64,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::InvalidInput(format!(
                "mixture parts: {k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("mixture dimension must be >= 1".into()));
        }
        let weight_sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || (weight_sum - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidInput(format!(
                "mixture weights must be non-negative and sum to 1 (sum = {weight_sum})"
            )));
        }
        for (mean, cov) in means.iter().zip(&covariances) {
            if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::DimensionMismatch(
                    "inconsistent mixture component dimensions".into(),
                ));
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite mixture parameter".into()));
            }
            let asym = (cov - cov.transpose()).abs().max();
            if asym > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "covariance not symmetric (max asymmetry {asym})"
                )));
            }
            if cholesky_of(cov).is_none() {
                return Err(Error::InvalidInput(
                    "covariance not positive definite".into(),
                ));
            }
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
            reg,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    /// log P(x | theta) by log-sum-exp over per-component log densities.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "scoring dim {} against mixture dim {}",
                x.len(),
                self.dim()
            )));
        }
        let xv = DVector::from_column_slice(x);
        let mut log_terms = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            if self.weights[k] == 0.0 {
                continue;
            }
            let chol = cholesky_of(&self.covariances[k]).ok_or_else(|| {
                Error::Model("covariance not positive definite (corrupted model?)".into())
            })?;
            log_terms.push(self.weights[k].ln() + log_normal(&chol, &self.means[k], &xv));
        }
        Ok(log_sum_exp(&log_terms))
    }

    /// Score a batch of feature vectors, preserving order.
    pub fn score_all(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        #[cfg(feature = "parallel")]
        {
            xs.par_iter().map(|x| self.score(x)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        xs.iter().map(|x| self.score(x)).collect()
    }

    /// Binary model file: magic, version, K, dim as little-endian u32, then
    /// all weights, all means, all covariances (row-major) as little-endian
    /// f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.components() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        let mut push = |value: f64| buf.extend_from_slice(&value.to_le_bytes());
        self.weights.iter().for_each(|&w| push(w));
        for mean in &self.means {
            mean.iter().for_each(|&m| push(m));
        }
        for cov in &self.covariances {
            for row in 0..cov.nrows() {
                for col in 0..cov.ncols() {
                    push(cov[(row, col)]);
                }
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::Model(format!("opening {}: {e}", path.display())))?;
        let mut header = [0u8; 12];
        file.read_exact(&mut header)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        if &header[0..4] != MODEL_MAGIC {
            return Err(Error::Model(format!(
                "{}: not a mixture model file",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "{}: unsupported model version {version}",
                path.display()
            )));
        }
        let k = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut dim_bytes = [0u8; 4];
        file.read_exact(&mut dim_bytes)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        let dim = u32::from_le_bytes(dim_bytes) as usize;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        let expected = 8 * (k + k * dim + k * dim * dim);
        if k == 0 || dim == 0 || raw.len() != expected {
            return Err(Error::Model(format!(
                "{}: malformed mixture payload",
                path.display()
            )));
        }
        let mut values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let weights: Vec<f64> = values.by_ref().take(k).collect();
        let means: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_iterator(dim, values.by_ref().take(dim)))
            .collect();
        let covariances: Vec<DMatrix<f64>> = (0..k)
            .map(|_| DMatrix::from_fn(dim, dim, |_, _| values.next().unwrap()).transpose())
            .collect();
        // The regularizer is a fit-time setting already folded into the
        // stored covariances; it is not part of the file format.
        GmmModel::from_parts(weights, means, covariances, 0.0)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

struct EStep {
    log_likelihood: f64,
    /// Responsibilities, row-major n x k.
    gamma: Vec<f64>,
    /// Per-point total log density, used to pick rescue locations.
    point_log_densities: Vec<f64>,
}

fn e_step(model: &GmmModel, data: &[DVector<f64>]) -> Result<EStep> {
    let k = model.components();
    let chols: Vec<Cholesky<f64, Dyn>> = model
        .covariances
        .iter()
        .map(|cov| {
            cholesky_of(cov).ok_or_else(|| {
                Error::InvalidInput("EM produced a non-positive-definite covariance".into())
            })
        })
        .collect::<Result<_>>()?;
    let log_weights: Vec<f64> = model
        .weights
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();

    let row = |x: &DVector<f64>| -> (f64, Vec<f64>) {
        let mut terms = vec![0.0; k];
        for j in 0..k {
            terms[j] = log_weights[j] + log_normal(&chols[j], &model.means[j], x);
        }
        let lse = log_sum_exp(&terms);
        let gamma_row: Vec<f64> = terms.iter().map(|&t| (t - lse).exp()).collect();
        (lse, gamma_row)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<(f64, Vec<f64>)> = data.par_iter().map(row).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<(f64, Vec<f64>)> = data.iter().map(row).collect();

    let mut gamma = Vec::with_capacity(data.len() * k);
    let mut point_log_densities = Vec::with_capacity(data.len());
    // Summed in index order regardless of thread count.
    let mut log_likelihood = 0.0;
    for (lse, gamma_row) in rows {
        log_likelihood += lse;
        point_log_densities.push(lse);
        gamma.extend(gamma_row);
    }
    Ok(EStep {
        log_likelihood,
        gamma,
        point_log_densities,
    })
}

struct MStepOutcome {
    model: GmmModel,
    rescued: bool,
}

fn m_step(
    data: &[DVector<f64>],
    e: &EStep,
    k: usize,
    reg: f64,
    shared_cov: &DMatrix<f64>,
) -> MStepOutcome {
    let n = data.len();
    let dim = data[0].len();
    let mut weights = vec![0.0; k];
    let mut means = vec![DVector::zeros(dim); k];
    let mut covariances = vec![DMatrix::zeros(dim, dim); k];
    let mut nk = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        for j in 0..k {
            nk[j] += e.gamma[i * k + j];
        }
        for j in 0..k {
            means[j] += x * e.gamma[i * k + j];
        }
    }
    let mut rescued = false;
    let mut rescue_point = 0usize;
    if nk.iter().any(|&v| v / (n as f64) < COLLAPSE_WEIGHT) {
        // Reinitialize collapsed components at the worst-explained point.
        rescued = true;
        rescue_point = e
            .point_log_densities
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite log density"))
            .map(|(i, _)| i)
            .unwrap_or(0);
    }
    for j in 0..k {
        if nk[j] / (n as f64) < COLLAPSE_WEIGHT {
            weights[j] = 1.0 / n as f64;
            means[j] = data[rescue_point].clone();
            covariances[j] = shared_cov.clone();
        } else {
            weights[j] = nk[j] / n as f64;
            means[j] /= nk[j];
            let mut scatter = DMatrix::zeros(dim, dim);
            for (i, x) in data.iter().enumerate() {
                let diff = x - &means[j];
                scatter.syger(e.gamma[i * k + j], &diff, &diff, 1.0);
            }
            scatter /= nk[j];
            for d in 0..dim {
                scatter[(d, d)] += reg;
            }
            // syger fills the lower triangle; mirror it.
            for r in 0..dim {
                for c in r + 1..dim {
                    scatter[(r, c)] = scatter[(c, r)];
                }
            }
            covariances[j] = scatter;
        }
    }
    if rescued {
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }
    MStepOutcome {
        model: GmmModel {
            weights,
            means,
            covariances,
            reg,
        },
        rescued,
    }
}

fn population_covariance(data: &[DVector<f64>], reg: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.len();
    let dim = data[0].len();
    let mut mean = DVector::zeros(dim);
    for x in data {
        mean += x;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in data {
        let diff = x - &mean;
        cov.syger(1.0, &diff, &diff, 1.0);
    }
    cov /= n as f64;
    for r in 0..dim {
        for c in r + 1..dim {
            cov[(r, c)] = cov[(c, r)];
        }
        cov[(r, r)] += reg;
    }
    (mean, cov)
}

/// Fit by expectation-maximization.
///
/// Initialization is seeded: means drawn from distinct data points, shared
/// population covariance, uniform weights. The accepted log-likelihood
/// trace is non-decreasing except across a component rescue; an M-step
/// that would lower the likelihood (possible only through the covariance
/// regularizer at numerical convergence) is rejected and fitting stops.
pub fn fit_em(features: &[Vec<f64>], settings: &EmSettings) -> Result<FitReport> {
    let k = settings.components;
    if k == 0 {
        return Err(Error::InvalidInput("component count must be >= 1".into()));
    }
    if !(settings.reg > 0.0) {
        return Err(Error::InvalidInput("covariance regularizer must be > 0".into()));
    }
    if features.is_empty() {
        return Err(Error::InvalidInput("no training features".into()));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("feature dimension must be >= 1".into()));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "feature dims {} and {dim} in one training set",
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite training feature".into()));
        }
    }
    let min_points = k * (dim + 1);
    if features.len() < min_points {
        return Err(Error::InvalidInput(format!(
            "insufficient data: {} points for {k} components of dim {dim} (need >= {min_points})",
            features.len()
        )));
    }

    let data: Vec<DVector<f64>> = features
        .iter()
        .map(|f| DVector::from_column_slice(f))
        .collect();
    let (_, shared_cov) = population_covariance(&data, settings.reg);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let picks = rand::seq::index::sample(&mut rng, data.len(), k);
    let means: Vec<DVector<f64>> = picks.iter().map(|i| data[i].clone()).collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        covariances: vec![shared_cov.clone(); k],
        reg: settings.reg,
    };

    let mut e = e_step(&model, &data)?;
    let mut trace = vec![e.log_likelihood];
    let mut rescues = Vec::new();
    let mut converged = false;
    for _ in 0..settings.max_iters {
        let outcome = m_step(&data, &e, k, settings.reg, &shared_cov);
        let candidate_e = e_step(&outcome.model, &data)?;
        if !outcome.rescued && candidate_e.log_likelihood < e.log_likelihood {
            // Regularized M-step failed to improve: numerically converged.
            converged = true;
            break;
        }
        let improvement = candidate_e.log_likelihood - e.log_likelihood;
        model = outcome.model;
        e = candidate_e;
        trace.push(e.log_likelihood);
        if outcome.rescued {
            rescues.push(trace.len() - 1);
        } else if improvement.abs() < settings.tol {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        model,
        log_likelihoods: trace,
        rescues,
        converged,
    })
}

/// Eq.-3 rule: normal only when the score strictly exceeds alpha.
pub fn classify_patch(score: f64, alpha: f64) -> Verdict {
    if score > alpha {
        Verdict::Normal
    } else {
        Verdict::Abnormal
    }
}

/// Eq.-4 rule over one frame's scored patches; `patch_scores` pairs patch
/// ids with their scores.
pub fn classify_frame(
    frame_index: usize,
    patch_scores: &[(usize, f64)],
    thresholds: &DecisionThresholds,
) -> FrameDecision {
    let abnormal_patches: Vec<usize> = patch_scores
        .iter()
        .filter(|(_, s)| classify_patch(*s, thresholds.alpha) == Verdict::Abnormal)
        .map(|(id, _)| *id)
        .collect();
    let verdict = if abnormal_patches.len() >= thresholds.beta {
        Verdict::Abnormal
    } else {
        Verdict::Normal
    };
    let frame_score = if patch_scores.len() >= thresholds.beta {
        let mut scores: Vec<f64> = patch_scores.iter().map(|(_, s)| *s).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).expect("finite patch score"));
        scores[thresholds.beta - 1]
    } else {
        f64::INFINITY
    };
    FrameDecision {
        frame_index,
        abnormal_patches,
        verdict,
        frame_score,
    }
}

/// Lower empirical quantile of the training scores: the ceil(q*N)-th
/// smallest value.
pub fn calibrate_alpha(training_scores: &[f64], quantile: f64) -> Result<f64> {
    if training_scores.is_empty() {
        return Err(Error::InvalidInput("no training scores".into()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha quantile {quantile} outside (0, 1)"
        )));
    }
    let mut sorted = training_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite training score"));
    let rank = (quantile * sorted.len() as f64).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}
