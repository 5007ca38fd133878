//! `hmof` — train, run, and evaluate the patch-based video
//! anomaly-detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hmof_core::config::PipelineConfig;
use hmof_core::pipeline;
use hmof_core::Error;

#[derive(Parser)]
#[command(
    name = "hmof",
    about = "Real-time video anomaly detection: magnitude-of-flow histograms over foreground patches, \
             autoencoder features, GMM scoring",
    version
)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate delta, train the autoencoder and GMM, calibrate alpha,
    /// and persist the models.
    Train {
        /// Overwrite existing model files.
        #[arg(long)]
        force: bool,
    },
    /// Score a test sequence with trained models: decisions.csv,
    /// detection masks, and optional dumps.
    Detect,
    /// Compare detection output against ground truth: report.json.
    Eval,
    /// Generate the synthetic benchmark scenario under paths.out_dir.
    Synth,
    /// Per-stage single-threaded timing over the test sequence.
    Bench,
    /// Run train+detect+eval once per descriptor kind and tabulate.
    Ablate {
        /// Overwrite existing model files.
        #[arg(long)]
        force: bool,
    },
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<(), Error> {
    match &cli.command {
        Command::Train { force } => {
            let summary = pipeline::train(cfg, *force)?;
            println!(
                "trained on {} features (dim {}): delta = {:.6}, alpha = {:.6}",
                summary.feature_count, summary.feature_dim, summary.delta, summary.alpha
            );
            println!(
                "autoencoder loss {:.6} -> {:.6}; EM {} iterations ({})",
                summary.ae_initial_loss,
                summary.ae_final_loss,
                summary.em_iterations,
                if summary.em_converged {
                    "converged"
                } else {
                    "max iterations"
                }
            );
            println!("models written to {}", cfg.model_dir.display());
        }
        Command::Detect => {
            let summary = pipeline::detect(cfg)?;
            println!(
                "detected {} abnormal of {} frames (alpha = {:.6}, beta = {})",
                summary.abnormal_frames,
                summary.rows.len(),
                summary.thresholds.alpha,
                summary.thresholds.beta
            );
            println!(
                "decisions written to {}",
                cfg.out_dir.join(pipeline::DECISIONS_FILE).display()
            );
        }
        Command::Eval => {
            let report = pipeline::evaluate(cfg)?;
            println!("frame-level AUC {:.4}, EER {:.4}", report.auc_frame, report.eer_frame);
            match (report.auc_pixel, report.eer_pixel) {
                (Some(auc), Some(eer)) => println!("pixel-level AUC {auc:.4}, EER {eer:.4}"),
                _ => {}
            }
            for note in &report.notes {
                println!("note: {note}");
            }
            println!(
                "report written to {}",
                cfg.out_dir.join(pipeline::REPORT_FILE).display()
            );
        }
        Command::Synth => {
            let summary = pipeline::synthesize(cfg)?;
            println!(
                "wrote {} frames ({} abnormal) to {}",
                summary.frames,
                summary.abnormal_frames,
                summary.frames_dir.display()
            );
            println!("ground truth at {}", summary.gt_path.display());
        }
        Command::Bench => {
            let timings = pipeline::benchmark(cfg)?;
            print!("{}", timings.table());
            println!(
                "timings written to {}",
                cfg.out_dir.join(pipeline::TIMINGS_FILE).display()
            );
        }
        Command::Ablate { force } => {
            let rows = pipeline::ablate(cfg, *force)?;
            println!(
                "{:<8}{:>12}{:>12}{:>12}",
                "kind", "frame AUC", "frame EER", "pixel EER"
            );
            for row in &rows {
                let pixel = row
                    .eer_pixel
                    .map(|e| format!("{e:.4}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<8}{:>12.4}{:>12.4}{:>12}",
                    row.kind, row.auc_frame, row.eer_frame, pixel
                );
            }
            println!(
                "table written to {}",
                cfg.out_dir.join(pipeline::ABLATION_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    if cli.print_config {
        print!("{}", cfg.render());
        return ExitCode::SUCCESS;
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
