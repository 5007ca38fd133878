//! Pipeline configuration: a `section.key = value` text file with typed
//! defaults, CLI overrides, and unknown-key rejection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::descriptors::DescriptorKind;
use crate::error::{Error, Result};
use crate::synth::SynthConfig;

/// Which autoencoder output feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeOutput {
    Latent,
    Reconstruction,
}

impl std::fmt::Display for AeOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AeOutput::Latent => write!(f, "latent"),
            AeOutput::Reconstruction => write!(f, "reconstruction"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub gt_path: PathBuf,
    pub model_dir: PathBuf,
    pub out_dir: PathBuf,

    pub io_pattern: String,
    pub io_fps: f64,
    pub dump_alpha: bool,
    pub dump_flow: bool,
    pub dump_features: bool,
    pub dump_patch_scores: bool,

    pub patch_size: usize,

    pub flow_iterations: usize,
    pub flow_smoothness: f64,

    pub fg_learning_rate: f64,
    pub fg_sensitivity: f64,
    /// Foreground patch threshold; `None` resolves to 0.05 * patch_size^2.
    pub fg_tau: Option<f64>,
    pub fg_warmup_frames: usize,

    pub feat_kind: DescriptorKind,
    pub feat_bins: usize,
    pub feat_discard_fraction: f64,
    /// Band threshold for the two-band baseline; `None` resolves to
    /// delta/2 at training time.
    pub feat_mhof_thresh: Option<f64>,
    pub feat_delta_from_all_pixels: bool,

    pub ae_hidden: usize,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_batch: usize,
    pub ae_seed: u64,
    pub ae_output: AeOutput,
    pub ae_halve_lr: bool,

    pub gmm_k: usize,
    pub gmm_seed: u64,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    pub gmm_reg: f64,
    pub gmm_alpha_quantile: f64,
    /// Explicit patch threshold override; `None` calibrates from the
    /// training-score quantile.
    pub gmm_alpha: Option<f64>,
    pub gmm_beta: usize,

    pub synth_width: usize,
    pub synth_height: usize,
    pub synth_frames: usize,
    pub synth_seed: u64,
    pub synth_normal_movers: usize,
    pub synth_normal_speed_min: f64,
    pub synth_normal_speed_max: f64,
    pub synth_anomaly_movers: usize,
    pub synth_anomaly_speed_min: f64,
    pub synth_anomaly_speed_max: f64,
    pub synth_anomaly_start: usize,
    pub synth_anomaly_end: usize,
    pub synth_object_size: usize,

    /// Worker threads for the optional throughput report; 0 keeps the
    /// benchmark single-threaded only.
    pub bench_threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_dir: PathBuf::new(),
            test_dir: PathBuf::new(),
            gt_path: PathBuf::new(),
            model_dir: PathBuf::from("models"),
            out_dir: PathBuf::from("out"),

            io_pattern: "*.pgm".into(),
            io_fps: 10.0,
            dump_alpha: false,
            dump_flow: false,
            dump_features: false,
            dump_patch_scores: true,

            patch_size: 20,

            flow_iterations: 100,
            flow_smoothness: 0.06,

            fg_learning_rate: 0.05,
            fg_sensitivity: 0.1,
            fg_tau: None,
            fg_warmup_frames: 30,

            feat_kind: DescriptorKind::Hmof,
            feat_bins: 8,
            feat_discard_fraction: 0.05,
            feat_mhof_thresh: None,
            feat_delta_from_all_pixels: false,

            ae_hidden: 4,
            ae_epochs: 200,
            ae_lr: 0.1,
            ae_batch: 64,
            ae_seed: 1,
            ae_output: AeOutput::Latent,
            ae_halve_lr: true,

            gmm_k: 5,
            gmm_seed: 1,
            gmm_max_iters: 200,
            gmm_tol: 1e-6,
            gmm_reg: 1e-2,
            gmm_alpha_quantile: 0.01,
            gmm_alpha: None,
            gmm_beta: 3,

            synth_width: 320,
            synth_height: 240,
            synth_frames: 400,
            synth_seed: 9,
            synth_normal_movers: 6,
            synth_normal_speed_min: 0.5,
            synth_normal_speed_max: 1.5,
            synth_anomaly_movers: 2,
            synth_anomaly_speed_min: 4.0,
            synth_anomaly_speed_max: 6.0,
            synth_anomaly_start: 250,
            synth_anomaly_end: 350,
            synth_object_size: 16,

            bench_threads: 0,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected {what}, got `{value}`")))
}

/// `auto` or a number.
fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num::<f64>(key, value, "a number or `auto`").map(Some)
    }
}

fn show_auto(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "auto".into(),
    }
}

impl PipelineConfig {
    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "paths.train_dir" => self.train_dir = PathBuf::from(value),
            "paths.test_dir" => self.test_dir = PathBuf::from(value),
            "paths.gt_path" => self.gt_path = PathBuf::from(value),
            "paths.model_dir" => self.model_dir = PathBuf::from(value),
            "paths.out_dir" => self.out_dir = PathBuf::from(value),

            "io.pattern" => self.io_pattern = value.to_string(),
            "io.fps" => self.io_fps = parse_num(key, value, "a number")?,
            "io.dump_alpha" => self.dump_alpha = parse_bool(key, value)?,
            "io.dump_flow" => self.dump_flow = parse_bool(key, value)?,
            "io.dump_features" => self.dump_features = parse_bool(key, value)?,
            "io.dump_patch_scores" => self.dump_patch_scores = parse_bool(key, value)?,

            "grid.patch_size" => self.patch_size = parse_num(key, value, "a positive integer")?,

            "flow.iterations" => self.flow_iterations = parse_num(key, value, "a positive integer")?,
            "flow.smoothness" => self.flow_smoothness = parse_num(key, value, "a number")?,

            "fg.learning_rate" => self.fg_learning_rate = parse_num(key, value, "a number")?,
            "fg.sensitivity" => self.fg_sensitivity = parse_num(key, value, "a number")?,
            "fg.tau" => self.fg_tau = parse_auto(key, value)?,
            "fg.warmup_frames" => self.fg_warmup_frames = parse_num(key, value, "an integer")?,

            "feat.kind" => self.feat_kind = value.parse()?,
            "feat.bins" => self.feat_bins = parse_num(key, value, "a positive integer")?,
            "feat.discard_fraction" => {
                self.feat_discard_fraction = parse_num(key, value, "a number")?
            }
            "feat.mhof_thresh" => self.feat_mhof_thresh = parse_auto(key, value)?,
            "feat.delta_from_all_pixels" => {
                self.feat_delta_from_all_pixels = parse_bool(key, value)?
            }

            "ae.hidden" => self.ae_hidden = parse_num(key, value, "a positive integer")?,
            "ae.epochs" => self.ae_epochs = parse_num(key, value, "a positive integer")?,
            "ae.lr" => self.ae_lr = parse_num(key, value, "a number")?,
            "ae.batch" => self.ae_batch = parse_num(key, value, "a positive integer")?,
            "ae.seed" => self.ae_seed = parse_num(key, value, "an integer")?,
            "ae.output" => {
                self.ae_output = match value {
                    "latent" => AeOutput::Latent,
                    "reconstruction" => AeOutput::Reconstruction,
                    _ => {
                        return Err(Error::Config(format!(
                            "ae.output: expected latent or reconstruction, got `{value}`"
                        )))
                    }
                }
            }
            "ae.halve_lr" => self.ae_halve_lr = parse_bool(key, value)?,

            "gmm.k" => self.gmm_k = parse_num(key, value, "a positive integer")?,
            "gmm.seed" => self.gmm_seed = parse_num(key, value, "an integer")?,
            "gmm.max_iters" => self.gmm_max_iters = parse_num(key, value, "a positive integer")?,
            "gmm.tol" => self.gmm_tol = parse_num(key, value, "a number")?,
            "gmm.reg" => self.gmm_reg = parse_num(key, value, "a number")?,
            "gmm.alpha_quantile" => self.gmm_alpha_quantile = parse_num(key, value, "a number")?,
            "gmm.alpha" => self.gmm_alpha = parse_auto(key, value)?,
            "gmm.beta" => self.gmm_beta = parse_num(key, value, "a positive integer")?,

            "synth.width" => self.synth_width = parse_num(key, value, "a positive integer")?,
            "synth.height" => self.synth_height = parse_num(key, value, "a positive integer")?,
            "synth.frames" => self.synth_frames = parse_num(key, value, "a positive integer")?,
            "synth.seed" => self.synth_seed = parse_num(key, value, "an integer")?,
            "synth.normal_movers" => {
                self.synth_normal_movers = parse_num(key, value, "an integer")?
            }
            "synth.normal_speed_min" => {
                self.synth_normal_speed_min = parse_num(key, value, "a number")?
            }
            "synth.normal_speed_max" => {
                self.synth_normal_speed_max = parse_num(key, value, "a number")?
            }
            "synth.anomaly_movers" => {
                self.synth_anomaly_movers = parse_num(key, value, "an integer")?
            }
            "synth.anomaly_speed_min" => {
                self.synth_anomaly_speed_min = parse_num(key, value, "a number")?
            }
            "synth.anomaly_speed_max" => {
                self.synth_anomaly_speed_max = parse_num(key, value, "a number")?
            }
            "synth.anomaly_start" => self.synth_anomaly_start = parse_num(key, value, "an integer")?,
            "synth.anomaly_end" => self.synth_anomaly_end = parse_num(key, value, "an integer")?,
            "synth.object_size" => {
                self.synth_object_size = parse_num(key, value, "a positive integer")?
            }

            "bench.threads" => self.bench_threads = parse_num(key, value, "an integer")?,

            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a whole config file body. Lines are `key = value`; blank lines
    /// and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Apply a `--set section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects `section.key=value`, got `{assignment}`"))
        })?;
        self.set(key.trim(), value.trim())
    }

    /// Foreground patch threshold with the auto default resolved.
    pub fn resolved_fg_tau(&self) -> f64 {
        self.fg_tau
            .unwrap_or(0.05 * (self.patch_size * self.patch_size) as f64)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            width: self.synth_width,
            height: self.synth_height,
            frames: self.synth_frames,
            seed: self.synth_seed,
            normal_movers: self.synth_normal_movers,
            normal_speed: (self.synth_normal_speed_min, self.synth_normal_speed_max),
            anomaly_movers: self.synth_anomaly_movers,
            anomaly_speed: (self.synth_anomaly_speed_min, self.synth_anomaly_speed_max),
            anomaly_window: (self.synth_anomaly_start, self.synth_anomaly_end),
            object_size: self.synth_object_size,
        }
    }

    /// Fully-resolved configuration in config-file syntax.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("paths.train_dir", self.train_dir.display().to_string());
        line("paths.test_dir", self.test_dir.display().to_string());
        line("paths.gt_path", self.gt_path.display().to_string());
        line("paths.model_dir", self.model_dir.display().to_string());
        line("paths.out_dir", self.out_dir.display().to_string());
        line("io.pattern", self.io_pattern.clone());
        line("io.fps", format!("{}", self.io_fps));
        line("io.dump_alpha", format!("{}", self.dump_alpha));
        line("io.dump_flow", format!("{}", self.dump_flow));
        line("io.dump_features", format!("{}", self.dump_features));
        line("io.dump_patch_scores", format!("{}", self.dump_patch_scores));
        line("grid.patch_size", format!("{}", self.patch_size));
        line("flow.iterations", format!("{}", self.flow_iterations));
        line("flow.smoothness", format!("{}", self.flow_smoothness));
        line("fg.learning_rate", format!("{}", self.fg_learning_rate));
        line("fg.sensitivity", format!("{}", self.fg_sensitivity));
        line("fg.tau", format!("{}", self.resolved_fg_tau()));
        line("fg.warmup_frames", format!("{}", self.fg_warmup_frames));
        line("feat.kind", format!("{}", self.feat_kind));
        line("feat.bins", format!("{}", self.feat_bins));
        line("feat.discard_fraction", format!("{}", self.feat_discard_fraction));
        line("feat.mhof_thresh", show_auto(self.feat_mhof_thresh));
        line(
            "feat.delta_from_all_pixels",
            format!("{}", self.feat_delta_from_all_pixels),
        );
        line("ae.hidden", format!("{}", self.ae_hidden));
        line("ae.epochs", format!("{}", self.ae_epochs));
        line("ae.lr", format!("{}", self.ae_lr));
        line("ae.batch", format!("{}", self.ae_batch));
        line("ae.seed", format!("{}", self.ae_seed));
        line("ae.output", format!("{}", self.ae_output));
        line("ae.halve_lr", format!("{}", self.ae_halve_lr));
        line("gmm.k", format!("{}", self.gmm_k));
        line("gmm.seed", format!("{}", self.gmm_seed));
        line("gmm.max_iters", format!("{}", self.gmm_max_iters));
        line("gmm.tol", format!("{}", self.gmm_tol));
        line("gmm.reg", format!("{}", self.gmm_reg));
        line("gmm.alpha_quantile", format!("{}", self.gmm_alpha_quantile));
        line("gmm.alpha", show_auto(self.gmm_alpha));
        line("gmm.beta", format!("{}", self.gmm_beta));
        line("synth.width", format!("{}", self.synth_width));
        line("synth.height", format!("{}", self.synth_height));
        line("synth.frames", format!("{}", self.synth_frames));
        line("synth.seed", format!("{}", self.synth_seed));
        line("synth.normal_movers", format!("{}", self.synth_normal_movers));
        line(
            "synth.normal_speed_min",
            format!("{}", self.synth_normal_speed_min),
        );
        line(
            "synth.normal_speed_max",
            format!("{}", self.synth_normal_speed_max),
        );
        line(
            "synth.anomaly_movers",
            format!("{}", self.synth_anomaly_movers),
        );
        line(
            "synth.anomaly_speed_min",
            format!("{}", self.synth_anomaly_speed_min),
        );
        line(
            "synth.anomaly_speed_max",
            format!("{}", self.synth_anomaly_speed_max),
        );
        line("synth.anomaly_start", format!("{}", self.synth_anomaly_start));
        line("synth.anomaly_end", format!("{}", self.synth_anomaly_end));
        line("synth.object_size", format!("{}", self.synth_object_size));
        line("bench.threads", format!("{}", self.bench_threads));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_tau_from_patch_size() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.resolved_fg_tau(), 20.0);
        let mut small = cfg.clone();
        small.set("grid.patch_size", "10").unwrap();
        assert_eq!(small.resolved_fg_tau(), 5.0);
        small.set("fg.tau", "3.5").unwrap();
        assert_eq!(small.resolved_fg_tau(), 3.5);
        small.set("fg.tau", "auto").unwrap();
        assert_eq!(small.resolved_fg_tau(), 5.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.set("flow.smoothnes", "0.1").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn parses_file_syntax_with_comments() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(
            "# comment\n\nflow.iterations = 30\nfeat.kind = mhof\npaths.out_dir = /tmp/x\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.flow_iterations, 30);
        assert_eq!(cfg.feat_kind, DescriptorKind::Mhof);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn bad_lines_name_their_position() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.apply_text("flow.iterations = 30\nnot a line\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:2"));
    }

    #[test]
    fn override_syntax() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_override("gmm.beta=5").unwrap();
        assert_eq!(cfg.gmm_beta, 5);
        assert!(cfg.apply_override("gmm.beta").is_err());
        assert!(cfg.apply_override("gmm.beta=x").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("feat.kind", "hof").unwrap();
        cfg.set("gmm.alpha", "-12.5").unwrap();
        cfg.set("paths.train_dir", "data/train").unwrap();
        let rendered = cfg.render();
        let mut back = PipelineConfig::default();
        back.apply_text(&rendered, "render").unwrap();
        // fg.tau renders resolved, so compare the resolved values.
        assert_eq!(back.resolved_fg_tau(), cfg.resolved_fg_tau());
        back.fg_tau = cfg.fg_tau;
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_rendered_key_is_known() {
        let cfg = PipelineConfig::default();
        let mut other = PipelineConfig::default();
        // A rendered config must parse without unknown-key errors.
        other.apply_text(&cfg.render(), "self").unwrap();
    }
}
