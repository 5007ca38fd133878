//! Per-stage timing report for the detection pipeline.

use serde::Serialize;

/// Mean seconds per frame for each pipeline stage, measured over a
/// single-threaded run.
#[derive(Debug, Clone, Serialize)]
pub struct StageTimings {
    /// Descriptor name used for the feature column (hmof, hof, or mhof).
    pub feature_kind: String,
    pub frames: usize,
    pub foreground: f64,
    pub optical_flow: f64,
    pub feature: f64,
    pub autoencoder: f64,
    pub gmm: f64,
    pub total: f64,
    /// Multi-threaded frames/second, present when a throughput run was
    /// requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput_threads: Option<usize>,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.foreground + self.optical_flow + self.feature + self.autoencoder + self.gmm
    }

    /// Aligned text table, one row of seconds/frame per stage plus total.
    pub fn table(&self) -> String {
        let header = [
            "Foreground".to_string(),
            "Optical Flow".to_string(),
            self.feature_kind.to_uppercase(),
            "Auto-Encoder".to_string(),
            "GMM".to_string(),
            "Total".to_string(),
        ];
        let values = [
            self.foreground,
            self.optical_flow,
            self.feature,
            self.autoencoder,
            self.gmm,
            self.total,
        ];
        let cells: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
        let mut line1 = format!("{:<12}", "Time (spf)");
        let mut line2 = format!("{:<12}", "this run");
        for (h, c) in header.iter().zip(&cells) {
            let w = h.len().max(c.len()) + 2;
            line1.push_str(&format!("{h:<w$}"));
            line2.push_str(&format!("{c:<w$}"));
        }
        let mut out = format!("{line1}\n{line2}\n");
        if let (Some(fps), Some(threads)) = (self.throughput_fps, self.throughput_threads) {
            out.push_str(&format!(
                "throughput   {fps:.1} frames/s on {threads} threads\n"
            ));
        }
        out
    }
}
