//! Real-time video anomaly detection pipeline.
//!
//! Stages: foreground patch selection over a running-average background,
//! dense optical flow, magnitude-histogram descriptors (with orientation
//! baselines), an autoencoder feature transform, Gaussian-mixture scoring
//! with two-threshold decisions, plus the frame/pixel-level evaluation
//! protocol, a synthetic benchmark generator, and per-stage timing.
//!
//! Data-parallel inner loops (flow sweeps, alpha maps, per-patch work) run
//! on rayon when the default `parallel` feature is enabled; disabling it
//! leaves bit-identical sequential fallbacks.

pub mod autoencoder;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod flow;
pub mod foreground;
pub mod frame;
pub mod gmm;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod timing;

pub use error::{Error, Result};
pub use gmm::Verdict;
