//! End-to-end laboratory for high-frame-rate video compressive sensing.
//!
//! The pipeline mirrors a block-based CS camera and its learned decoder:
//!
//! 1. [`ingest`] turns raw clips into normalized, block-partitioned GOP
//!    datasets (luminance only, central crop, 32x32 blocks by default).
//! 2. [`sensing`] simulates the encoder: random Bernoulli projection of each
//!    block at two rates (a low-CR key frame and high-CR non-key frames),
//!    with optional measurement noise.
//! 3. [`model`] is the CSVideoNet decoder: per-frame measurement-to-block
//!    CNNs plus a synthesizing LSTM that fuses a whole GOP.
//! 4. [`training`] runs the two-phase optimization (key-CNN pretraining,
//!    then end-to-end) with Adam and checkpointing.
//! 5. [`evaluation`] scores reconstructions (PSNR/SSIM/MAE), sweeps noise
//!    levels, and benchmarks decode latency.
//!
//! Everything randomized is a pure function of explicit seeds, so runs are
//! reproducible bit for bit in a fixed execution mode.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod scalar;
pub mod sensing;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
