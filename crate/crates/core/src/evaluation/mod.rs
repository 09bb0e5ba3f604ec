//! Image-quality metrics, loss maps, the hole study and the timing bench.

mod hole;
mod lossmap;
mod metrics;
mod quality;
mod timing;

pub use hole::{carve_training_set, hole_study, hole_study_with, loss_map, CarvedDataset, Hole, HoleStudy};
pub use lossmap::{grid_to_pgm, grid_to_text, relative_map, LossMap, MapGrid, MAP_BIN_MM};
pub use metrics::{mse, psnr, psnr_from, psnr_with, ssim, PsnrPeak, SsimConstants};
pub use quality::{evaluate_model, evaluate_model_with, ConstantModel, QualityReport, Simulator};
pub use timing::{
    benchmark_inputs, hardware_descriptor, timing_bench, TimingConfig, TimingReport, REALTIME_BUDGET_MS,
    REFERENCE_DECODER_MS,
};
