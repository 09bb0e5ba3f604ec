use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Decoder, NormalizedPose};
use crate::phantom::{surface_pose, PhantomSpec, PoseSampler};
use crate::tensor::Tensor;

/// Reference GPU figure for the full-size decoder, in milliseconds.
pub const REFERENCE_DECODER_MS: (f64, f64) = (3.6, 0.53);

/// Real-time budget for 25 Hz display.
pub const REALTIME_BUDGET_MS: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub n_infer: usize,
    pub n_repeat: usize,
    pub warmup: usize,
    /// Seed of the benchmark pose sequence.
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            n_infer: 500,
            n_repeat: 20,
            warmup: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model_id: String,
    pub image_size: usize,
    pub hardware: String,
    pub n_infer: usize,
    /// Mean single-inference time of each repeat, milliseconds.
    pub repeat_means_ms: Vec<f64>,
    pub mean_ms: f64,
    /// Population standard deviation of the repeat means.
    pub std_ms: f64,
}

impl TimingReport {
    pub fn to_text(&self) -> String {
        let means: Vec<String> = self.repeat_means_ms.iter().map(|m| format!("{m:.4}")).collect();
        format!(
            "model_id: {}\nimage_size: {}\nhardware: {}\ninferences_per_repeat: {}\nrepeats: {}\n\
             repeat_means_ms: [{}]\nmean_ms: {:.4}\nstd_ms: {:.4}\nrealtime_budget_ms: {}\n\
             reference_gpu_ms: {} +/- {}\n",
            self.model_id,
            self.image_size,
            self.hardware,
            self.n_infer,
            self.repeat_means_ms.len(),
            means.join(", "),
            self.mean_ms,
            self.std_ms,
            REALTIME_BUDGET_MS,
            REFERENCE_DECODER_MS.0,
            REFERENCE_DECODER_MS.1,
        )
    }
}

/// CPU model, architecture and logical core count.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu} ({}, {cores} logical cores, 1 thread used)", std::env::consts::ARCH)
}

/// Distinct batch-1 network inputs on the default phantom surface.
pub fn benchmark_inputs(n: usize, seed: u64) -> Result<Vec<Tensor>> {
    let axes = PhantomSpec::default().semi_axes_mm;
    PoseSampler::default()
        .draw_many(n, seed)
        .into_iter()
        .map(|c| Ok(NormalizedPose::from_pose(&surface_pose(c, axes)?)?.to_tensor()))
        .collect()
}

/// Times batch-1 eval-mode forward passes on the calling thread. Inputs
/// are prepared beforehand so only the network runs inside the clock.
pub fn timing_bench(decoder: &Decoder, model_id: &str, cfg: &TimingConfig) -> Result<TimingReport> {
    if cfg.n_infer == 0 || cfg.n_repeat == 0 {
        return Err(Error::InvalidArgument("timing needs at least one inference and one repeat".into()));
    }
    let inputs = benchmark_inputs(cfg.n_infer, cfg.seed)?;
    for x in inputs.iter().cycle().take(cfg.warmup) {
        std::hint::black_box(decoder.forward(x)?);
    }
    let mut repeat_means_ms = Vec::with_capacity(cfg.n_repeat);
    for _ in 0..cfg.n_repeat {
        let start = Instant::now();
        for x in &inputs {
            std::hint::black_box(decoder.forward(std::hint::black_box(x))?);
        }
        repeat_means_ms.push(start.elapsed().as_secs_f64() * 1e3 / cfg.n_infer as f64);
    }
    let n = repeat_means_ms.len() as f64;
    let mean_ms = repeat_means_ms.iter().sum::<f64>() / n;
    let std_ms = (repeat_means_ms.iter().map(|m| (m - mean_ms).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TimingReport {
        model_id: model_id.to_string(),
        image_size: decoder.output_size(),
        hardware: hardware_descriptor(),
        n_infer: cfg.n_infer,
        repeat_means_ms,
        mean_ms,
        std_ms,
    })
}
