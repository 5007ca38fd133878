//! Fully-connected autoencoder (d -> h -> d) that maps descriptor vectors
//! into the latent space consumed by the classifier. Tanh hidden layer,
//! linear output, mean-squared reconstruction loss, trained by seeded
//! mini-batch gradient descent.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const MODEL_MAGIC: &[u8; 4] = b"HMAE";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderParams {
    w_enc: DMatrix<f64>,
    b_enc: DVector<f64>,
    w_dec: DMatrix<f64>,
    b_dec: DVector<f64>,
}

/// Latent activation vector; tanh keeps every component in (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Halve the learning rate whenever the mean epoch loss increases.
    pub halve_lr_on_increase: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 64,
            seed: 1,
            halve_lr_on_increase: true,
        }
    }
}

impl TrainSettings {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter-shaped gradient, used by training and by the finite-difference
/// checks in the test suite.
#[derive(Debug, Clone)]
pub struct ParamGradient {
    pub w_enc: DMatrix<f64>,
    pub b_enc: DVector<f64>,
    pub w_dec: DMatrix<f64>,
    pub b_dec: DVector<f64>,
}

impl AutoEncoderParams {
    /// Seeded init: weights uniform on [-1/sqrt(d), 1/sqrt(d)], biases zero.
    pub fn init(input_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "autoencoder dims must be positive, got d={input_dim}, h={latent_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut sample = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };
        let w_enc = sample(latent_dim, input_dim);
        let w_dec = sample(input_dim, latent_dim);
        Ok(AutoEncoderParams {
            w_enc,
            b_enc: DVector::zeros(latent_dim),
            w_dec,
            b_dec: DVector::zeros(input_dim),
        })
    }

    /// Assemble from explicit weights and biases.
    pub fn from_parts(
        w_enc: DMatrix<f64>,
        b_enc: DVector<f64>,
        w_dec: DMatrix<f64>,
        b_dec: DVector<f64>,
    ) -> Result<Self> {
        let h = w_enc.nrows();
        let d = w_enc.ncols();
        if d == 0 || h == 0 {
            return Err(Error::InvalidInput("autoencoder dims must be positive".into()));
        }
        if b_enc.len() != h || w_dec.nrows() != d || w_dec.ncols() != h || b_dec.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "autoencoder parts: w_enc {h}x{d}, b_enc {}, w_dec {}x{}, b_dec {}",
                b_enc.len(),
                w_dec.nrows(),
                w_dec.ncols(),
                b_dec.len()
            )));
        }
        let params = AutoEncoderParams {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        };
        if params
            .w_enc
            .iter()
            .chain(params.w_dec.iter())
            .chain(params.b_enc.iter())
            .chain(params.b_dec.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite autoencoder parameter".into()));
        }
        Ok(params)
    }

    pub fn parts(&self) -> (&DMatrix<f64>, &DVector<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec)
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_enc.nrows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input of dim {} into autoencoder expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// z = tanh(W_enc x + b_enc).
    pub fn encode(&self, x: &[f64]) -> Result<LatentFeature> {
        self.check_input(x)?;
        let xv = DVector::from_column_slice(x);
        let z = (&self.w_enc * xv + &self.b_enc).map(f64::tanh);
        Ok(LatentFeature {
            values: z.as_slice().to_vec(),
        })
    }

    /// xhat = W_dec z + b_dec (linear output).
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch(format!(
                "latent of dim {} into decoder expecting {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let zv = DVector::from_column_slice(z);
        let xhat = &self.w_dec * zv + &self.b_dec;
        Ok(xhat.as_slice().to_vec())
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.encode(x)?;
        self.decode(&z.values)
    }

    /// Reconstruction loss of one sample.
    pub fn sample_loss(&self, x: &[f64]) -> Result<f64> {
        reconstruction_loss(x, &self.reconstruct(x)?)
    }

    /// Mean reconstruction loss over a dataset.
    pub fn mean_loss(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let mut total = 0.0;
        for x in data {
            total += self.sample_loss(x)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Backpropagated gradient of the reconstruction loss at one sample.
    pub fn loss_gradient(&self, x: &[f64]) -> Result<ParamGradient> {
        self.check_input(x)?;
        let d = self.input_dim() as f64;
        let xv = DVector::from_column_slice(x);
        let z = (&self.w_enc * &xv + &self.b_enc).map(f64::tanh);
        let xhat = &self.w_dec * &z + &self.b_dec;
        // dL/dxhat for L = (1/d) * sum (xhat - x)^2
        let e = (xhat - &xv) * (2.0 / d);
        let g_w_dec = &e * z.transpose();
        let dz = self.w_dec.transpose() * &e;
        let g_pre = dz.zip_map(&z, |dzi, zi| dzi * (1.0 - zi * zi));
        let g_w_enc = &g_pre * xv.transpose();
        Ok(ParamGradient {
            w_enc: g_w_enc,
            b_enc: g_pre,
            w_dec: g_w_dec,
            b_dec: e,
        })
    }

    fn apply_gradient(&mut self, grad: &ParamGradient, step: f64) {
        self.w_enc.zip_apply(&grad.w_enc, |w, g| *w -= step * g);
        self.b_enc.zip_apply(&grad.b_enc, |b, g| *b -= step * g);
        self.w_dec.zip_apply(&grad.w_dec, |w, g| *w -= step * g);
        self.b_dec.zip_apply(&grad.b_dec, |b, g| *b -= step * g);
    }

    /// Versioned binary model file: magic, version, dims, then weights and
    /// biases as little-endian f64 in w_enc, b_enc, w_dec, b_dec order
    /// (matrices row-major).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.latent_dim() as u32).to_le_bytes());
        let mut push = |value: f64| buf.extend_from_slice(&value.to_le_bytes());
        for row in 0..self.w_enc.nrows() {
            for col in 0..self.w_enc.ncols() {
                push(self.w_enc[(row, col)]);
            }
        }
        self.b_enc.iter().for_each(|&v| push(v));
        for row in 0..self.w_dec.nrows() {
            for col in 0..self.w_dec.ncols() {
                push(self.w_dec[(row, col)]);
            }
        }
        self.b_dec.iter().for_each(|&v| push(v));
        std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| Error::Model(format!("opening {}: {e}", path.display())))?;
        let mut header = [0u8; 16];
        file.read_exact(&mut header)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        if &header[0..4] != MODEL_MAGIC {
            return Err(Error::Model(format!(
                "{}: not an autoencoder model file",
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
        let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if d == 0 || h == 0 {
            return Err(Error::Model(format!("{}: zero dimension", path.display())));
        }
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        let expected = 8 * (h * d + h + d * h + d);
        if raw.len() != expected {
            return Err(Error::Model(format!(
                "{}: expected {expected} parameter bytes, found {}",
                path.display(),
                raw.len()
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut pos = 0usize;
        let mut take = |count: usize| {
            let slice = &values[pos..pos + count];
            pos += count;
            slice.to_vec()
        };
        let w_enc = DMatrix::from_row_slice(h, d, &take(h * d));
        let b_enc = DVector::from_column_slice(&take(h));
        let w_dec = DMatrix::from_row_slice(d, h, &take(d * h));
        let b_dec = DVector::from_column_slice(&take(d));
        let params = AutoEncoderParams {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        };
        if params
            .w_enc
            .iter()
            .chain(params.w_dec.iter())
            .chain(params.b_enc.iter())
            .chain(params.b_dec.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Model(format!(
                "{}: non-finite parameter",
                path.display()
            )));
        }
        Ok(params)
    }
}

/// Mean squared error (1/d) * sum (x_i - xhat_i)^2.
pub fn reconstruction_loss(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() || x.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "loss over dims {} vs {}",
            x.len(),
            xhat.len()
        )));
    }
    let sum: f64 = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Training output: final parameters plus the mean-loss trace per epoch
/// (index 0 is the pre-training loss).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: AutoEncoderParams,
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent with seeded shuffling. The returned
/// parameters never have a higher mean training loss than the initial ones.
pub fn train(
    params: &AutoEncoderParams,
    data: &[Vec<f64>],
    settings: &TrainSettings,
) -> Result<TrainReport> {
    settings.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training dataset".into()));
    }
    for x in data {
        params.check_input(x)?;
    }
    let mut current = params.clone();
    let initial_loss = current.mean_loss(data)?;
    let mut losses = vec![initial_loss];
    let mut lr = settings.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = current.clone();
    let mut best_loss = initial_loss;
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            let mut grad: Option<ParamGradient> = None;
            for &idx in batch {
                let g = current.loss_gradient(&data[idx])?;
                match &mut grad {
                    None => grad = Some(g),
                    Some(acc) => {
                        acc.w_enc += &g.w_enc;
                        acc.b_enc += &g.b_enc;
                        acc.w_dec += &g.w_dec;
                        acc.b_dec += &g.b_dec;
                    }
                }
            }
            let grad = grad.expect("non-empty batch");
            current.apply_gradient(&grad, lr / batch.len() as f64);
        }
        let epoch_loss = current.mean_loss(data)?;
        if settings.halve_lr_on_increase && epoch_loss > *losses.last().unwrap() {
            lr *= 0.5;
        }
        losses.push(epoch_loss);
        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            best = current.clone();
        }
    }
    // Never return parameters worse than the starting point.
    let report_params = if *losses.last().unwrap() <= best_loss {
        current
    } else {
        best
    };
    Ok(TrainReport {
        params: report_params,
        epoch_losses: losses,
    })
}

/// Encode a whole dataset, preserving order.
pub fn encode_all(params: &AutoEncoderParams, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    #[cfg(feature = "parallel")]
    {
        data.par_iter()
            .map(|x| params.encode(x).map(|z| z.values))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    data.iter()
        .map(|x| params.encode(x).map(|z| z.values))
        .collect()
}

/// Reconstruct a whole dataset, preserving order.
pub fn reconstruct_all(params: &AutoEncoderParams, data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    #[cfg(feature = "parallel")]
    {
        data.par_iter().map(|x| params.reconstruct(x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    data.iter().map(|x| params.reconstruct(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = AutoEncoderParams::init(8, 4, 42).unwrap();
        let b = AutoEncoderParams::init(8, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = AutoEncoderParams::init(8, 4, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(AutoEncoderParams::init(0, 4, 1).is_err());
        assert!(AutoEncoderParams::init(8, 0, 1).is_err());
    }

    #[test]
    fn init_bounds_weights() {
        let p = AutoEncoderParams::init(16, 4, 7).unwrap();
        let bound = 1.0 / 4.0;
        assert!(p.w_enc.iter().chain(p.w_dec.iter()).all(|w| w.abs() <= bound));
        assert!(p.b_enc.iter().all(|&b| b == 0.0));
        assert!(p.b_dec.iter().all(|&b| b == 0.0));
    }

    fn manual_params(w_enc: DMatrix<f64>, w_dec: DMatrix<f64>) -> AutoEncoderParams {
        let h = w_enc.nrows();
        let d = w_enc.ncols();
        AutoEncoderParams::from_parts(w_enc, DVector::zeros(h), w_dec, DVector::zeros(d)).unwrap()
    }

    #[test]
    fn encode_zero_params_gives_zero() {
        let p = manual_params(DMatrix::zeros(3, 4), DMatrix::zeros(4, 3));
        let z = p.encode(&[0.3, -0.2, 0.9, 0.1]).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_cancellation() {
        let p = manual_params(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(2, 1),
        );
        let z = p.encode(&[0.5, -0.5]).unwrap();
        assert_eq!(z.values, vec![0.0]);
    }

    #[test]
    fn encode_tanh_one() {
        let p = manual_params(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 1),
        );
        let z = p.encode(&[1.0, 0.0]).unwrap();
        assert!((z.values[0] - 1f64.tanh()).abs() < 1e-12);
        assert!((z.values[0] - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn decode_examples() {
        let p = manual_params(
            DMatrix::zeros(1, 2),
            DMatrix::from_row_slice(2, 1, &[2.0, 3.0]),
        );
        assert_eq!(p.decode(&[0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.decode(&[0.5]).unwrap(), vec![1.0, 1.5]);
        // Bias-only decoder ignores z.
        let mut bias_only = manual_params(DMatrix::zeros(1, 2), DMatrix::zeros(2, 1));
        bias_only.b_dec = DVector::from_column_slice(&[0.7, -0.1]);
        assert_eq!(bias_only.decode(&[123.0]).unwrap(), vec![0.7, -0.1]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(reconstruction_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(reconstruction_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(reconstruction_loss(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn dimension_mismatches_error() {
        let p = AutoEncoderParams::init(8, 4, 1).unwrap();
        assert!(p.encode(&[0.0; 7]).is_err());
        assert!(p.decode(&[0.0; 5]).is_err());
    }

    #[test]
    fn memorizes_single_point() {
        let p = AutoEncoderParams::init(8, 4, 1).unwrap();
        let x = vec![0.125, 0.0, 0.25, 0.125, 0.0, 0.25, 0.125, 0.125];
        let settings = TrainSettings {
            epochs: 500,
            learning_rate: 0.05,
            batch_size: 1,
            seed: 1,
            halve_lr_on_increase: true,
        };
        let report = train(&p, &[x.clone()], &settings).unwrap();
        let final_loss = report.params.sample_loss(&x).unwrap();
        assert!(final_loss < 1e-3, "final loss {final_loss}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let p = AutoEncoderParams::init(8, 4, 1).unwrap();
        let data = vec![vec![0.1; 8], vec![0.3; 8]];
        let settings = TrainSettings {
            epochs: 3,
            learning_rate: 0.0,
            batch_size: 2,
            seed: 1,
            halve_lr_on_increase: false,
        };
        let report = train(&p, &data, &settings).unwrap();
        assert_eq!(report.params, p);
        assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic() {
        let p = AutoEncoderParams::init(8, 3, 9).unwrap();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).sin().abs() / 8.0).collect())
            .collect();
        let settings = TrainSettings {
            epochs: 20,
            ..TrainSettings::default()
        };
        let a = train(&p, &data, &settings).unwrap();
        let b = train(&p, &data, &settings).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn final_loss_never_exceeds_initial() {
        let p = AutoEncoderParams::init(6, 2, 3).unwrap();
        let data: Vec<Vec<f64>> = (0..30)
            .map(|i| (0..6).map(|j| ((i + j) as f64 * 0.71).cos() * 0.5 + 0.5).collect())
            .collect();
        // Deliberately unstable learning rate.
        let settings = TrainSettings {
            epochs: 40,
            learning_rate: 4.0,
            batch_size: 8,
            seed: 2,
            halve_lr_on_increase: true,
        };
        let report = train(&p, &data, &settings).unwrap();
        let initial = report.epoch_losses[0];
        let final_loss = report.params.mean_loss(&data).unwrap();
        assert!(
            final_loss <= initial + 1e-12,
            "final {final_loss} vs initial {initial}"
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let p = AutoEncoderParams::init(8, 4, 1).unwrap();
        assert!(train(&p, &[], &TrainSettings::default()).is_err());
    }

    // Central finite differences over every parameter; the oracle only
    // evaluates the forward pass.
    fn finite_difference_gradient(params: &AutoEncoderParams, x: &[f64]) -> ParamGradient {
        let eps = 1e-5;
        let mut perturbed = params.clone();
        let mut fd = ParamGradient {
            w_enc: DMatrix::zeros(params.w_enc.nrows(), params.w_enc.ncols()),
            b_enc: DVector::zeros(params.b_enc.len()),
            w_dec: DMatrix::zeros(params.w_dec.nrows(), params.w_dec.ncols()),
            b_dec: DVector::zeros(params.b_dec.len()),
        };
        let mut probe = |write: &mut dyn FnMut(&mut AutoEncoderParams, f64), base: f64| -> f64 {
            write(&mut perturbed, base + eps);
            let plus = perturbed.sample_loss(x).unwrap();
            write(&mut perturbed, base - eps);
            let minus = perturbed.sample_loss(x).unwrap();
            write(&mut perturbed, base);
            (plus - minus) / (2.0 * eps)
        };
        for r in 0..params.w_enc.nrows() {
            for c in 0..params.w_enc.ncols() {
                let base = params.w_enc[(r, c)];
                fd.w_enc[(r, c)] = probe(&mut |p, v| p.w_enc[(r, c)] = v, base);
            }
        }
        for i in 0..params.b_enc.len() {
            let base = params.b_enc[i];
            fd.b_enc[i] = probe(&mut |p, v| p.b_enc[i] = v, base);
        }
        for r in 0..params.w_dec.nrows() {
            for c in 0..params.w_dec.ncols() {
                let base = params.w_dec[(r, c)];
                fd.w_dec[(r, c)] = probe(&mut |p, v| p.w_dec[(r, c)] = v, base);
            }
        }
        for i in 0..params.b_dec.len() {
            let base = params.b_dec[i];
            fd.b_dec[i] = probe(&mut |p, v| p.b_dec[i] = v, base);
        }
        fd
    }

    pub(crate) fn max_relative_gradient_error(params: &AutoEncoderParams, x: &[f64]) -> f64 {
        let analytic = params.loss_gradient(x).unwrap();
        let fd = finite_difference_gradient(params, x);
        let mut max_err = 0.0f64;
        let mut check = |a: f64, b: f64| {
            let err = (a - b).abs() / (b.abs() + 1e-8);
            if err > max_err {
                max_err = err;
            }
        };
        analytic
            .w_enc
            .iter()
            .zip(fd.w_enc.iter())
            .for_each(|(&a, &b)| check(a, b));
        analytic
            .b_enc
            .iter()
            .zip(fd.b_enc.iter())
            .for_each(|(&a, &b)| check(a, b));
        analytic
            .w_dec
            .iter()
            .zip(fd.w_dec.iter())
            .for_each(|(&a, &b)| check(a, b));
        analytic
            .b_dec
            .iter()
            .zip(fd.b_dec.iter())
            .for_each(|(&a, &b)| check(a, b));
        max_err
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let d = rng.random_range(2..10);
            let h = rng.random_range(1..6);
            let mut params = AutoEncoderParams::init(d, h, rng.random()).unwrap();
            // Random biases so those gradients are exercised away from zero.
            params.b_enc.apply(|b| *b = rng.random_range(-0.5..0.5));
            params.b_dec.apply(|b| *b = rng.random_range(-0.5..0.5));
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = max_relative_gradient_error(&params, &x);
            assert!(err < 1e-4, "gradient mismatch: {err}");
        }
    }

    #[test]
    fn model_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.hmae");
        let p = AutoEncoderParams::init(8, 4, 5).unwrap();
        p.save(&path).unwrap();
        let q = AutoEncoderParams::load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hmae");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x08\x00\x00\x00\x04\x00\x00\x00").unwrap();
        let err = AutoEncoderParams::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
