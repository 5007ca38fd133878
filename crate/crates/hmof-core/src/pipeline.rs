//! End-to-end orchestration: train, detect, evaluate, ablate, synthesize,
//! and the per-stage benchmark. These are the library entry points behind
//! the CLI subcommands; every artifact they write round-trips through the
//! readers in this module.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::autoencoder::{self, AutoEncoderParams, TrainSettings};
use crate::config::{AeOutput, PipelineConfig};
use crate::descriptors::{self, DescriptorConfig, DescriptorKind, FeatureVector, HmofConfig};
use crate::error::{Error, Result};
use crate::eval::{self, curve_to_json, EvalReport, FramePatchScores};
use crate::flow::{self, FlowConfig};
use crate::foreground::{self, BackgroundModel, PatchSelection};
use crate::frame::{FrameSequence, PatchGrid};
use crate::gmm::{self, DecisionThresholds, EmSettings, GmmModel, Verdict};
use crate::io::{self, gt as gt_io, pgm};
use crate::synth;
use crate::timing::StageTimings;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const AE_FILE: &str = "autoencoder.hmae";
pub const GMM_FILE: &str = "gmm.hmgm";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const PATCH_SCORES_FILE: &str = "patchscores.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const ABLATION_FILE: &str = "ablation.json";

fn frame_name(index: usize) -> String {
    format!("{index:06}.pgm")
}

fn fnv1a_extend(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= u64::from(b);
        *hash = hash.wrapping_mul(0x100000001b3);
    }
}

fn fingerprint(seq: &FrameSequence) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    fnv1a_extend(&mut hash, &(seq.width() as u64).to_le_bytes());
    fnv1a_extend(&mut hash, &(seq.height() as u64).to_le_bytes());
    fnv1a_extend(&mut hash, &(seq.len() as u64).to_le_bytes());
    for frame in seq.frames() {
        fnv1a_extend(&mut hash, &frame.to_bytes());
    }
    hash
}

/// Training manifest: the resolved configuration plus everything
/// calibration produced. Written as the same `key = value` syntax the
/// config uses, with extra `calibrated.*` and `data.*` keys.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub delta: f64,
    /// Resolved two-band threshold (delta/2 unless overridden).
    pub mhof_thresh: f64,
    pub alpha: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub fingerprint: u64,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::from("# training manifest\n");
        s.push_str(&self.config.render());
        let _ = writeln!(s, "calibrated.delta = {}", self.delta);
        let _ = writeln!(s, "calibrated.mhof_thresh = {}", self.mhof_thresh);
        let _ = writeln!(s, "calibrated.alpha = {}", self.alpha);
        let _ = writeln!(s, "data.width = {}", self.width);
        let _ = writeln!(s, "data.height = {}", self.height);
        let _ = writeln!(s, "data.frames = {}", self.frames);
        let _ = writeln!(s, "data.feature_dim = {}", self.feature_dim);
        let _ = writeln!(s, "data.fingerprint = {:016x}", self.fingerprint);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        let mut config = PipelineConfig::default();
        let mut delta = None;
        let mut mhof_thresh = None;
        let mut alpha = None;
        let mut width = None;
        let mut height = None;
        let mut frames = None;
        let mut feature_dim = None;
        let mut fp = None;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Model(format!("{}: malformed manifest line", path.display())))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Model(format!("{}: bad number `{v}`", path.display())))
            };
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Model(format!("{}: bad integer `{v}`", path.display())))
            };
            match key {
                "calibrated.delta" => delta = Some(parse_f64(value)?),
                "calibrated.mhof_thresh" => mhof_thresh = Some(parse_f64(value)?),
                "calibrated.alpha" => alpha = Some(parse_f64(value)?),
                "data.width" => width = Some(parse_usize(value)?),
                "data.height" => height = Some(parse_usize(value)?),
                "data.frames" => frames = Some(parse_usize(value)?),
                "data.feature_dim" => feature_dim = Some(parse_usize(value)?),
                "data.fingerprint" => {
                    fp = Some(u64::from_str_radix(value, 16).map_err(|_| {
                        Error::Model(format!("{}: bad fingerprint `{value}`", path.display()))
                    })?)
                }
                _ => config
                    .set(key, value)
                    .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?,
            }
        }
        let missing =
            || Error::Model(format!("{}: incomplete manifest", path.display()));
        Ok(Manifest {
            config,
            delta: delta.ok_or_else(missing)?,
            mhof_thresh: mhof_thresh.ok_or_else(missing)?,
            alpha: alpha.ok_or_else(missing)?,
            width: width.ok_or_else(missing)?,
            height: height.ok_or_else(missing)?,
            frames: frames.ok_or_else(missing)?,
            feature_dim: feature_dim.ok_or_else(missing)?,
            fingerprint: fp.ok_or_else(missing)?,
        })
    }
}

/// The persisted training artifacts.
pub struct TrainedModels {
    pub manifest: Manifest,
    pub ae: AutoEncoderParams,
    pub gmm: GmmModel,
}

impl TrainedModels {
    pub fn load(model_dir: &Path) -> Result<Self> {
        for file in [MANIFEST_FILE, AE_FILE, GMM_FILE] {
            if !model_dir.join(file).is_file() {
                return Err(Error::Model(format!(
                    "missing model file {} (run train first)",
                    model_dir.join(file).display()
                )));
            }
        }
        Ok(TrainedModels {
            manifest: Manifest::read(&model_dir.join(MANIFEST_FILE))?,
            ae: AutoEncoderParams::load(&model_dir.join(AE_FILE))?,
            gmm: GmmModel::load(&model_dir.join(GMM_FILE))?,
        })
    }
}

fn descriptor_config(
    kind: DescriptorKind,
    bins: usize,
    delta: f64,
    discard_fraction: f64,
    mhof_thresh: f64,
) -> DescriptorConfig {
    match kind {
        DescriptorKind::Hmof => DescriptorConfig::Hmof(HmofConfig {
            bins,
            delta,
            discard_fraction,
        }),
        DescriptorKind::Hof => DescriptorConfig::Hof { bins },
        DescriptorKind::Mhof => DescriptorConfig::Mhof {
            bins,
            m_thresh: mhof_thresh,
        },
    }
}

fn transform(
    ae: &AutoEncoderParams,
    raw: &[Vec<f64>],
    output: AeOutput,
) -> Result<Vec<Vec<f64>>> {
    match output {
        AeOutput::Latent => autoencoder::encode_all(ae, raw),
        AeOutput::Reconstruction => autoencoder::reconstruct_all(ae, raw),
    }
}

fn transform_seq(
    ae: &AutoEncoderParams,
    raw: &[Vec<f64>],
    output: AeOutput,
) -> Result<Vec<Vec<f64>>> {
    raw.iter()
        .map(|x| match output {
            AeOutput::Latent => ae.encode(x).map(|z| z.values),
            AeOutput::Reconstruction => ae.reconstruct(x),
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub frames: usize,
    pub abnormal_frames: usize,
    pub frames_dir: PathBuf,
    pub gt_path: PathBuf,
}

/// Generate the configured synthetic scenario under `out_dir`: a `frames/`
/// directory of PGMs, `gt.csv`, and `gt_masks/` holding the non-blank
/// anomaly masks.
pub fn synthesize(cfg: &PipelineConfig) -> Result<SynthSummary> {
    synthesize_inner(cfg).map_err(|e| e.in_stage("synth"))
}

fn synthesize_inner(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let out = synth::generate(&cfg.synth_config())?;
    let frames_dir = cfg.out_dir.join("frames");
    create_dir(&frames_dir)?;
    for frame in out.sequence.frames() {
        pgm::write(
            &frames_dir.join(frame_name(frame.index())),
            frame.width(),
            frame.height(),
            &frame.to_bytes(),
        )?;
    }
    let gt_path = cfg.out_dir.join("gt.csv");
    gt_io::write_labels(&gt_path, &out.ground_truth.labels)?;
    if let Some(masks) = &out.ground_truth.masks {
        gt_io::write_masks(&cfg.out_dir.join("gt_masks"), masks)?;
    }
    Ok(SynthSummary {
        frames: out.sequence.len(),
        abnormal_frames: out
            .ground_truth
            .labels
            .iter()
            .filter(|&&l| l == Verdict::Abnormal)
            .count(),
        frames_dir,
        gt_path,
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub delta: f64,
    pub alpha: f64,
    pub feature_count: usize,
    pub feature_dim: usize,
    pub ae_initial_loss: f64,
    pub ae_final_loss: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
}

struct ForegroundSettings {
    learning_rate: f32,
    sensitivity: f32,
    tau: f64,
    warmup: usize,
}

impl ForegroundSettings {
    fn from_config(cfg: &PipelineConfig) -> Self {
        ForegroundSettings {
            learning_rate: cfg.fg_learning_rate as f32,
            sensitivity: cfg.fg_sensitivity as f32,
            tau: cfg.resolved_fg_tau(),
            warmup: cfg.fg_warmup_frames,
        }
    }

    /// First frame index with the full pipeline active: flow needs a
    /// previous frame and the background model needs its warmup.
    fn start_frame(&self) -> usize {
        self.warmup.max(1)
    }
}

/// Sequential background pass producing one selection per frame (empty
/// during warmup). The alpha sink sees every frame with index >= 1.
fn foreground_pass(
    seq: &FrameSequence,
    grid: &PatchGrid,
    fg: &ForegroundSettings,
    mut alpha_sink: impl FnMut(usize, &foreground::AlphaMap) -> Result<()>,
) -> Result<Vec<PatchSelection>> {
    let frames = seq.frames();
    let mut selections = Vec::with_capacity(frames.len());
    let mut bg = BackgroundModel::new(&frames[0], fg.learning_rate)?;
    let start = fg.start_frame();
    for (i, frame) in frames.iter().enumerate() {
        if i == 0 {
            selections.push(PatchSelection {
                frame_index: 0,
                selected: Vec::new(),
                values: Vec::new(),
            });
            continue;
        }
        let alpha = foreground::estimate_alpha(&bg, frame, fg.sensitivity)?;
        alpha_sink(i, &alpha)?;
        if i >= start {
            let values = foreground::patch_foreground_values(&alpha, frame, grid)?;
            selections.push(foreground::select_patches(i, &values, fg.tau));
        } else {
            selections.push(PatchSelection {
                frame_index: i,
                selected: Vec::new(),
                values: Vec::new(),
            });
        }
        bg.update(frame)?;
    }
    Ok(selections)
}

/// Per-frame flow data kept during training: flow vectors of the selected
/// patches, plus whole-frame magnitudes when delta calibrates on all
/// pixels.
struct FrameFlowData {
    patch_vectors: Vec<(usize, Vec<(f32, f32)>)>,
    all_magnitudes: Option<Vec<f32>>,
}

pub fn train(cfg: &PipelineConfig, force: bool) -> Result<TrainSummary> {
    train_inner(cfg, force).map_err(|e| e.in_stage("train"))
}

fn train_inner(cfg: &PipelineConfig, force: bool) -> Result<TrainSummary> {
    let model_dir = &cfg.model_dir;
    if !force {
        for file in [MANIFEST_FILE, AE_FILE, GMM_FILE] {
            if model_dir.join(file).exists() {
                return Err(Error::Model(format!(
                    "{} already exists (pass --force to overwrite)",
                    model_dir.join(file).display()
                )));
            }
        }
    }
    let seq = io::load_sequence(&cfg.train_dir, &cfg.io_pattern, cfg.io_fps)?;
    let grid = PatchGrid::partition(seq.width(), seq.height(), cfg.patch_size)?;
    let fg = ForegroundSettings::from_config(cfg);
    let flow_cfg = FlowConfig {
        iterations: cfg.flow_iterations,
        smoothness: cfg.flow_smoothness as f32,
    };

    let selections = foreground_pass(&seq, &grid, &fg, |_, _| Ok(()))?;

    // Flow on every frame that contributes to calibration or features.
    let frames = seq.frames();
    let start = fg.start_frame();
    let need_all = cfg.feat_delta_from_all_pixels;
    let flow_task = |i: usize| -> Result<FrameFlowData> {
        let sel = &selections[i];
        if i < start || (sel.selected.is_empty() && !need_all) {
            return Ok(FrameFlowData {
                patch_vectors: Vec::new(),
                all_magnitudes: None,
            });
        }
        let field = flow::estimate_flow(&frames[i - 1], &frames[i], &flow_cfg)?;
        let patch_vectors = sel
            .selected
            .iter()
            .map(|&id| {
                let vectors: Vec<(f32, f32)> = grid
                    .pixels(id)
                    .expect("selected id is valid")
                    .map(|(x, y)| field.at(x, y))
                    .collect();
                (id, vectors)
            })
            .collect();
        let all_magnitudes = need_all.then(|| {
            field
                .u()
                .iter()
                .zip(field.v())
                .map(|(&u, &v)| {
                    let (u, v) = (f64::from(u), f64::from(v));
                    ((u * u + v * v).sqrt()) as f32
                })
                .collect()
        });
        Ok(FrameFlowData {
            patch_vectors,
            all_magnitudes,
        })
    };
    #[cfg(feature = "parallel")]
    let flow_data: Vec<FrameFlowData> = (0..frames.len())
        .into_par_iter()
        .map(flow_task)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let flow_data: Vec<FrameFlowData> = (0..frames.len())
        .map(flow_task)
        .collect::<Result<_>>()?;

    // Delta calibration from the training magnitudes.
    let mut delta_magnitudes: Vec<f64> = Vec::new();
    if need_all {
        for data in &flow_data {
            if let Some(mags) = &data.all_magnitudes {
                delta_magnitudes.extend(mags.iter().map(|&m| f64::from(m)));
            }
        }
    } else {
        for data in &flow_data {
            for (_, vectors) in &data.patch_vectors {
                delta_magnitudes.extend(vectors.iter().map(|&(u, v)| {
                    let (u, v) = (f64::from(u), f64::from(v));
                    (u * u + v * v).sqrt()
                }));
            }
        }
    }
    if delta_magnitudes.is_empty() {
        return Err(Error::InvalidInput(
            "no foreground patches selected during training (check fg.tau and fg.warmup_frames)"
                .into(),
        ));
    }
    let delta = descriptors::calibrate_delta(&delta_magnitudes, cfg.feat_discard_fraction)?;
    let mhof_thresh = cfg.feat_mhof_thresh.unwrap_or(delta / 2.0);
    let desc = descriptor_config(
        cfg.feat_kind,
        cfg.feat_bins,
        delta,
        cfg.feat_discard_fraction,
        mhof_thresh,
    );

    // Descriptors for every selected patch, frame order then patch order.
    let mut raw_features: Vec<Vec<f64>> = Vec::new();
    for data in &flow_data {
        for (_, vectors) in &data.patch_vectors {
            let pairs: Vec<(f64, f64)> = vectors
                .iter()
                .map(|&(u, v)| (f64::from(u), f64::from(v)))
                .collect();
            raw_features.push(descriptors::compute(&pairs, &desc)?.values);
        }
    }
    let feature_count = raw_features.len();

    let ae_init = AutoEncoderParams::init(desc.dimension(), cfg.ae_hidden, cfg.ae_seed)?;
    let ae_report = autoencoder::train(
        &ae_init,
        &raw_features,
        &TrainSettings {
            epochs: cfg.ae_epochs,
            learning_rate: cfg.ae_lr,
            batch_size: cfg.ae_batch,
            seed: cfg.ae_seed,
            halve_lr_on_increase: cfg.ae_halve_lr,
        },
    )?;
    let inputs = transform(&ae_report.params, &raw_features, cfg.ae_output)?;

    let fit = gmm::fit_em(
        &inputs,
        &EmSettings {
            components: cfg.gmm_k,
            seed: cfg.gmm_seed,
            max_iters: cfg.gmm_max_iters,
            tol: cfg.gmm_tol,
            reg: cfg.gmm_reg,
        },
    )?;
    let training_scores = fit.model.score_all(&inputs)?;
    let alpha = match cfg.gmm_alpha {
        Some(alpha) => alpha,
        None => gmm::calibrate_alpha(&training_scores, cfg.gmm_alpha_quantile)?,
    };

    create_dir(model_dir)?;
    let manifest = Manifest {
        config: cfg.clone(),
        delta,
        mhof_thresh,
        alpha,
        width: seq.width(),
        height: seq.height(),
        frames: seq.len(),
        feature_dim: desc.dimension(),
        fingerprint: fingerprint(&seq),
    };
    manifest.write(&model_dir.join(MANIFEST_FILE))?;
    ae_report.params.save(&model_dir.join(AE_FILE))?;
    fit.model.save(&model_dir.join(GMM_FILE))?;

    Ok(TrainSummary {
        delta,
        alpha,
        feature_count,
        feature_dim: desc.dimension(),
        ae_initial_loss: ae_report.epoch_losses[0],
        ae_final_loss: *ae_report.epoch_losses.last().expect("loss trace"),
        em_iterations: fit.log_likelihoods.len() - 1,
        em_converged: fit.converged,
    })
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

/// One row of `decisions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub frame: usize,
    pub n_foreground: usize,
    pub n_abnormal: usize,
    pub frame_score: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct DetectSummary {
    pub rows: Vec<FrameRow>,
    pub abnormal_frames: usize,
    pub thresholds: DecisionThresholds,
}

/// Stage settings frozen at training time plus detect-time thresholds.
struct Detector {
    grid: PatchGrid,
    flow_cfg: FlowConfig,
    fg: ForegroundSettings,
    desc: DescriptorConfig,
    ae: AutoEncoderParams,
    ae_output: AeOutput,
    gmm: GmmModel,
    thresholds: DecisionThresholds,
}

struct FrameScores {
    scores: Vec<(usize, f64)>,
    features: Vec<(usize, FeatureVector)>,
}

impl Detector {
    /// Stage settings come from the manifest so detection always matches
    /// calibration; only paths, dumps, and the decision thresholds are
    /// read from the detect-time config.
    fn from_models(models: &TrainedModels, cfg: &PipelineConfig) -> Result<Detector> {
        let trained = &models.manifest.config;
        let grid = PatchGrid::partition(
            models.manifest.width,
            models.manifest.height,
            trained.patch_size,
        )?;
        let alpha = cfg.gmm_alpha.unwrap_or(models.manifest.alpha);
        let thresholds = DecisionThresholds::new(alpha, cfg.gmm_beta)?;
        let desc = descriptor_config(
            trained.feat_kind,
            trained.feat_bins,
            models.manifest.delta,
            trained.feat_discard_fraction,
            models.manifest.mhof_thresh,
        );
        if desc.dimension() != models.manifest.feature_dim
            || desc.dimension() != models.ae.input_dim()
        {
            return Err(Error::Model(format!(
                "descriptor dimension {} does not match trained models ({})",
                desc.dimension(),
                models.ae.input_dim()
            )));
        }
        Ok(Detector {
            grid,
            flow_cfg: FlowConfig {
                iterations: trained.flow_iterations,
                smoothness: trained.flow_smoothness as f32,
            },
            fg: ForegroundSettings::from_config(trained),
            desc,
            ae: models.ae.clone(),
            ae_output: trained.ae_output,
            gmm: models.gmm.clone(),
            thresholds,
        })
    }

    /// Flow, descriptors, transform, and scoring for one frame.
    fn score_frame(&self, seq: &FrameSequence, selection: &PatchSelection) -> Result<FrameScores> {
        let i = selection.frame_index;
        if selection.selected.is_empty() {
            return Ok(FrameScores {
                scores: Vec::new(),
                features: Vec::new(),
            });
        }
        let frames = seq.frames();
        let field = flow::estimate_flow(&frames[i - 1], &frames[i], &self.flow_cfg)?;
        let feats =
            descriptors::extract_patches(&field, &self.grid, &selection.selected, &self.desc)?;
        let raw: Vec<Vec<f64>> = feats.iter().map(|f| f.values.clone()).collect();
        let inputs = transform(&self.ae, &raw, self.ae_output)?;
        let scores = self.gmm.score_all(&inputs)?;
        Ok(FrameScores {
            scores: selection.selected.iter().copied().zip(scores).collect(),
            features: selection.selected.iter().copied().zip(feats).collect(),
        })
    }
}

fn write_decisions(path: &Path, rows: &[FrameRow]) -> Result<()> {
    let mut out = String::from("frame,n_foreground,n_abnormal,frame_score,verdict\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.frame, row.n_foreground, row.n_abnormal, row.frame_score, row.verdict
        );
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_decisions(path: &Path) -> Result<Vec<FrameRow>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "frame,n_foreground,n_abnormal,frame_score,verdict" {
                return Err(Error::InvalidInput(format!(
                    "{}: unexpected header",
                    path.display()
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidInput(format!(
                "{}:{}: expected 5 fields",
                path.display(),
                lineno + 1
            )));
        }
        let bad = |what: &str| {
            Error::InvalidInput(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        rows.push(FrameRow {
            frame: fields[0].parse().map_err(|_| bad("frame index"))?,
            n_foreground: fields[1].parse().map_err(|_| bad("foreground count"))?,
            n_abnormal: fields[2].parse().map_err(|_| bad("abnormal count"))?,
            frame_score: fields[3].parse().map_err(|_| bad("frame score"))?,
            verdict: fields[4].parse()?,
        });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.frame != i {
            return Err(Error::InvalidInput(format!(
                "{}: frame indices not consecutive",
                path.display()
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no decision rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn write_patch_scores(path: &Path, results: &[FrameScores]) -> Result<()> {
    let mut out = String::from("frame,patch_id,score\n");
    for (i, result) in results.iter().enumerate() {
        for (id, score) in &result.scores {
            let _ = writeln!(out, "{i},{id},{score}");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_patch_scores(path: &Path, n_frames: usize) -> Result<Vec<FramePatchScores>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut frames: Vec<FramePatchScores> = (0..n_frames)
        .map(|frame_index| FramePatchScores {
            frame_index,
            scores: Vec::new(),
        })
        .collect();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| {
            Error::InvalidInput(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        if fields.len() != 3 {
            return Err(bad("row"));
        }
        let frame: usize = fields[0].parse().map_err(|_| bad("frame index"))?;
        if frame >= n_frames {
            return Err(bad("frame index"));
        }
        let id: usize = fields[1].parse().map_err(|_| bad("patch id"))?;
        let score: f64 = fields[2].parse().map_err(|_| bad("score"))?;
        frames[frame].scores.push((id, score));
    }
    Ok(frames)
}

fn write_features(path: &Path, results: &[FrameScores], dim: usize) -> Result<()> {
    let mut out = String::from("frame,patch_id,kind");
    for i in 1..=dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (i, result) in results.iter().enumerate() {
        for (id, feature) in &result.features {
            let _ = write!(out, "{i},{id},{}", feature.kind);
            for v in &feature.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn detect(cfg: &PipelineConfig) -> Result<DetectSummary> {
    detect_inner(cfg).map_err(|e| e.in_stage("detect"))
}

fn detect_inner(cfg: &PipelineConfig) -> Result<DetectSummary> {
    let models = TrainedModels::load(&cfg.model_dir)?;
    let seq = io::load_sequence(&cfg.test_dir, &cfg.io_pattern, cfg.io_fps)?;
    if seq.width() != models.manifest.width || seq.height() != models.manifest.height {
        return Err(Error::Model(format!(
            "test frames are {}x{} but the training manifest says {}x{}",
            seq.width(),
            seq.height(),
            models.manifest.width,
            models.manifest.height
        )));
    }
    let detector = Detector::from_models(&models, cfg)?;
    create_dir(&cfg.out_dir)?;

    let alpha_dir = if cfg.dump_alpha {
        let dir = cfg.out_dir.join("alpha");
        create_dir(&dir)?;
        Some(dir)
    } else {
        None
    };
    let selections = foreground_pass(&seq, &detector.grid, &detector.fg, |i, alpha| {
        if let Some(dir) = &alpha_dir {
            pgm::write(
                &dir.join(frame_name(i)),
                alpha.width(),
                alpha.height(),
                &alpha.to_bytes(),
            )?;
        }
        Ok(())
    })?;

    let flow_dir = if cfg.dump_flow {
        let dir = cfg.out_dir.join("flow");
        create_dir(&dir)?;
        Some(dir)
    } else {
        None
    };
    let task = |selection: &PatchSelection| -> Result<FrameScores> {
        let result = detector.score_frame(&seq, selection)?;
        if let Some(dir) = &flow_dir {
            if !selection.selected.is_empty() {
                // Re-derive the field for the dump; detection keeps no flow
                // buffers alive across frames.
                let frames = seq.frames();
                let field = flow::estimate_flow(
                    &frames[selection.frame_index - 1],
                    &frames[selection.frame_index],
                    &detector.flow_cfg,
                )?;
                field.write_to(&dir.join(format!("{:06}.flow", selection.frame_index)))?;
            }
        }
        Ok(result)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<FrameScores> = selections.par_iter().map(task).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<FrameScores> = selections.iter().map(task).collect::<Result<_>>()?;

    let masks_dir = cfg.out_dir.join("masks");
    create_dir(&masks_dir)?;
    let mut rows = Vec::with_capacity(seq.len());
    for (i, result) in results.iter().enumerate() {
        let decision = gmm::classify_frame(i, &result.scores, &detector.thresholds);
        // Eq.-4 semantics extend to the mask: below beta the abnormal
        // candidates are dropped entirely.
        let mask_ids: &[usize] = if decision.verdict == Verdict::Abnormal {
            &decision.abnormal_patches
        } else {
            &[]
        };
        let mask = eval::mask_from_patches(&detector.grid, mask_ids, seq.width(), seq.height())?;
        pgm::write(
            &masks_dir.join(frame_name(i)),
            seq.width(),
            seq.height(),
            &mask.to_bytes(),
        )?;
        rows.push(FrameRow {
            frame: i,
            n_foreground: selections[i].selected.len(),
            n_abnormal: decision.abnormal_count(),
            frame_score: decision.frame_score,
            verdict: decision.verdict,
        });
    }
    write_decisions(&cfg.out_dir.join(DECISIONS_FILE), &rows)?;
    if cfg.dump_patch_scores {
        write_patch_scores(&cfg.out_dir.join(PATCH_SCORES_FILE), &results)?;
    }
    if cfg.dump_features {
        write_features(
            &cfg.out_dir.join(FEATURES_FILE),
            &results,
            detector.desc.dimension(),
        )?;
    }
    let abnormal_frames = rows
        .iter()
        .filter(|r| r.verdict == Verdict::Abnormal)
        .count();
    Ok(DetectSummary {
        rows,
        abnormal_frames,
        thresholds: detector.thresholds,
    })
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn evaluate(cfg: &PipelineConfig) -> Result<EvalReport> {
    evaluate_inner(cfg).map_err(|e| e.in_stage("eval"))
}

fn evaluate_inner(cfg: &PipelineConfig) -> Result<EvalReport> {
    let rows = read_decisions(&cfg.out_dir.join(DECISIONS_FILE))?;
    if cfg.gt_path.as_os_str().is_empty() {
        return Err(Error::GroundTruth(
            "paths.gt_path is not set; evaluation needs ground truth".into(),
        ));
    }
    let manifest = Manifest::read(&cfg.model_dir.join(MANIFEST_FILE))?;
    let gt = gt_io::read_ground_truth(&cfg.gt_path, (manifest.width, manifest.height))?;
    if gt.labels.len() != rows.len() {
        return Err(Error::GroundTruth(format!(
            "{} ground-truth labels for {} detected frames",
            gt.labels.len(),
            rows.len()
        )));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.frame_score).collect();
    let frame_curve = eval::roc(&scores, &gt.labels)?;
    let auc_frame = eval::auc(&frame_curve);
    let eer_frame = eval::eer(&frame_curve);

    let mut notes = Vec::new();
    let mut auc_pixel = None;
    let mut eer_pixel = None;
    let mut roc_pixel = None;
    if gt.masks.is_some() {
        let scores_path = cfg.out_dir.join(PATCH_SCORES_FILE);
        if scores_path.is_file() {
            let frames = read_patch_scores(&scores_path, rows.len())?;
            let grid = PatchGrid::partition(manifest.width, manifest.height, manifest.config.patch_size)?;
            let pixel_curve = eval::pixel_roc(&frames, &gt, &grid, cfg.gmm_beta)?;
            auc_pixel = Some(eval::auc(&pixel_curve));
            eer_pixel = Some(eval::eer(&pixel_curve));
            roc_pixel = Some(curve_to_json(&pixel_curve));
        } else {
            notes.push(
                "pixel-level metrics omitted: patch scores absent (set io.dump_patch_scores = true)"
                    .to_string(),
            );
        }
    } else {
        notes.push("pixel-level metrics omitted: ground truth has no masks".to_string());
    }

    let report = EvalReport {
        auc_frame,
        eer_frame,
        auc_pixel,
        eer_pixel,
        roc_frame: curve_to_json(&frame_curve),
        roc_pixel,
        notes,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("serializing report: {e}")))?;
    let path = cfg.out_dir.join(REPORT_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub kind: String,
    pub auc_frame: f64,
    pub eer_frame: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer_pixel: Option<f64>,
}

/// Train, detect, and evaluate once per descriptor kind under
/// `model_dir/<kind>` and `out_dir/<kind>`, with identical seeds and
/// settings everywhere else.
pub fn ablate(cfg: &PipelineConfig, force: bool) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for kind in [DescriptorKind::Hmof, DescriptorKind::Hof, DescriptorKind::Mhof] {
        let mut sub = cfg.clone();
        sub.feat_kind = kind;
        sub.model_dir = cfg.model_dir.join(kind.to_string());
        sub.out_dir = cfg.out_dir.join(kind.to_string());
        train(&sub, force)?;
        detect(&sub)?;
        let report = evaluate(&sub)?;
        rows.push(AblationRow {
            kind: kind.to_string(),
            auc_frame: report.auc_frame,
            eer_frame: report.eer_frame,
            eer_pixel: report.eer_pixel,
        });
    }
    create_dir(&cfg.out_dir)?;
    let json = serde_json::to_string_pretty(&rows)
        .map_err(|e| Error::InvalidInput(format!("serializing ablation: {e}")))?;
    let path = cfg.out_dir.join(ABLATION_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

/// Single-threaded per-stage timing over the test sequence, in the shape
/// of a seconds-per-frame table. A positive `bench.threads` adds a
/// separate multi-threaded throughput figure.
pub fn benchmark(cfg: &PipelineConfig) -> Result<StageTimings> {
    benchmark_inner(cfg).map_err(|e| e.in_stage("bench"))
}

fn benchmark_inner(cfg: &PipelineConfig) -> Result<StageTimings> {
    let models = TrainedModels::load(&cfg.model_dir)?;
    let seq = io::load_sequence(&cfg.test_dir, &cfg.io_pattern, cfg.io_fps)?;
    if seq.width() != models.manifest.width || seq.height() != models.manifest.height {
        return Err(Error::Model(format!(
            "benchmark frames are {}x{} but the training manifest says {}x{}",
            seq.width(),
            seq.height(),
            models.manifest.width,
            models.manifest.height
        )));
    }
    let detector = Detector::from_models(&models, cfg)?;
    let frames = seq.frames();
    let fg = &detector.fg;
    let start = fg.start_frame();
    if frames.len() <= start {
        return Err(Error::InvalidInput(format!(
            "benchmark needs more than {start} frames (warmup) to measure anything"
        )));
    }

    let mut bg = BackgroundModel::new(&frames[0], fg.learning_rate)?;
    let mut sums = [0.0f64; 6]; // fg, flow, feature, ae, gmm, total
    let mut measured = 0usize;
    for i in 1..frames.len() {
        let frame_clock = Instant::now();
        let clock = Instant::now();
        let alpha = foreground::estimate_alpha_seq(&bg, &frames[i], fg.sensitivity)?;
        let selection = if i >= start {
            let values = foreground::patch_foreground_values_seq(&alpha, &frames[i], &detector.grid)?;
            foreground::select_patches(i, &values, fg.tau)
        } else {
            PatchSelection {
                frame_index: i,
                selected: Vec::new(),
                values: Vec::new(),
            }
        };
        bg.update(&frames[i])?;
        let fg_time = clock.elapsed().as_secs_f64();
        if i < start {
            continue;
        }

        let clock = Instant::now();
        let field = if selection.selected.is_empty() {
            None
        } else {
            Some(flow::estimate_flow_seq(&frames[i - 1], &frames[i], &detector.flow_cfg)?)
        };
        let flow_time = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let feats = match &field {
            Some(field) => descriptors::extract_patches_seq(
                field,
                &detector.grid,
                &selection.selected,
                &detector.desc,
            )?,
            None => Vec::new(),
        };
        let feature_time = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let raw: Vec<Vec<f64>> = feats.iter().map(|f| f.values.clone()).collect();
        let inputs = transform_seq(&detector.ae, &raw, detector.ae_output)?;
        let ae_time = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut scores = Vec::with_capacity(inputs.len());
        for (id, input) in selection.selected.iter().zip(&inputs) {
            scores.push((*id, detector.gmm.score(input)?));
        }
        let _decision = gmm::classify_frame(i, &scores, &detector.thresholds);
        let gmm_time = clock.elapsed().as_secs_f64();

        sums[0] += fg_time;
        sums[1] += flow_time;
        sums[2] += feature_time;
        sums[3] += ae_time;
        sums[4] += gmm_time;
        sums[5] += frame_clock.elapsed().as_secs_f64();
        measured += 1;
    }

    let mut timings = StageTimings {
        feature_kind: detector.desc.kind().to_string(),
        frames: measured,
        foreground: sums[0] / measured as f64,
        optical_flow: sums[1] / measured as f64,
        feature: sums[2] / measured as f64,
        autoencoder: sums[3] / measured as f64,
        gmm: sums[4] / measured as f64,
        total: sums[5] / measured as f64,
        throughput_fps: None,
        throughput_threads: None,
    };

    #[cfg(feature = "parallel")]
    if cfg.bench_threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.bench_threads)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        let clock = Instant::now();
        pool.install(|| -> Result<()> {
            let selections = foreground_pass(&seq, &detector.grid, fg, |_, _| Ok(()))?;
            let results: Vec<FrameScores> = selections
                .par_iter()
                .map(|s| detector.score_frame(&seq, s))
                .collect::<Result<_>>()?;
            for (i, result) in results.iter().enumerate() {
                let _ = gmm::classify_frame(i, &result.scores, &detector.thresholds);
            }
            Ok(())
        })?;
        let elapsed = clock.elapsed().as_secs_f64();
        timings.throughput_fps = Some(seq.len() as f64 / elapsed);
        timings.throughput_threads = Some(cfg.bench_threads);
    }

    create_dir(&cfg.out_dir)?;
    let json = serde_json::to_string_pretty(&timings)
        .map_err(|e| Error::InvalidInput(format!("serializing timings: {e}")))?;
    let path = cfg.out_dir.join(TIMINGS_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(timings)
}
