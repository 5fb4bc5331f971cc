//! Quality metrics, evaluation sweeps, and runtime benchmarking.

pub mod metrics;

pub use metrics::{mae, psnr, psnr_drop, ssim, PSNR_CAP_DB};
