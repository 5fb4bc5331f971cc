//! Two-phase optimization: the key CNN is pretrained alone on
//! (key measurement, key block) pairs, then the full decoder trains end to
//! end from that initialization. Both phases are deterministic given their
//! seeds.

pub mod checkpoint;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{
    adagrad_step, adam_step, clip_global_norm, sgd_step, AdamHyper, OptimizerKind, OptimizerState,
};

use crate::error::{Error, Result};
use crate::evaluation::metrics::psnr;
use crate::ingest::{BlockDataset, GopBlockSequence};
use crate::model::{
    self, CnnParams, DecoderMode, DecoderParams, ModelConfig,
};
use crate::scalar::Real;
use crate::sensing::{mix_seed, sense_blocks, sense_gop, MeasurementGop, SensingMatrixSet};
use ndarray::{Array2, ArrayViewD, Axis, s};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Full,
}

/// Hyperparameters for one training phase.
///
/// `batch_size` counts blocks in the pretrain phase and GOPs in the full
/// phase; it is capped at the dataset size. `clip_norm` bounds the global
/// gradient norm (on by default only for the full phase, which has the long
/// CNN-to-LSTM path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub batch_size: usize,
    pub step_count: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Record reconstruction PSNR every this many steps (0 = never).
    pub eval_every: usize,
    pub clip_norm: Option<f64>,
    pub optimizer: OptimizerKind,
    /// Full phase only: train the full decoder or the CNN-only ablation arm.
    pub mode: DecoderMode,
}

impl TrainConfig {
    pub fn pretrain_defaults() -> Self {
        Self {
            phase: Phase::Pretrain,
            batch_size: 100,
            step_count: 500,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 0,
            clip_norm: None,
            optimizer: OptimizerKind::Adam,
            mode: DecoderMode::Full,
        }
    }

    pub fn full_defaults() -> Self {
        Self {
            phase: Phase::Full,
            batch_size: 20,
            step_count: 2000,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 100,
            clip_norm: Some(5.0),
            optimizer: OptimizerKind::Adam,
            mode: DecoderMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.step_count == 0 {
            return Err(Error::Config("batch size and step count must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        Ok(())
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }
}

/// One structured log record per optimization step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

pub type TrainLog = Vec<StepRecord>;

/// Half mean squared error over batch items (axis 0):
/// `(1/2N) * sum_i ||pred_i - target_i||^2`, accumulated in f64.
pub fn mse_loss<F: Real>(pred: ArrayViewD<F>, target: ArrayViewD<F>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse_loss batch"));
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.iter().zip(target.iter()) {
        let (p, t) = (p.as_f64(), t.as_f64());
        if !p.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite("mse_loss"));
        }
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / (2.0 * pred.len_of(Axis(0)) as f64))
}

/// Deterministic epoch-shuffled index stream.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(count: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..count).collect(),
            cursor: 0,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.shuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// The pretraining corpus: key-frame measurements and their source blocks.
#[derive(Debug, Clone)]
pub struct KeyPairSet {
    /// `(N, m_key)` measurements.
    pub y: Array2<f32>,
    /// `(N, n)` target blocks.
    pub x: Array2<f32>,
}

/// Senses frame 0 of every GOP at every grid position.
pub fn key_pretrain_pairs(ds: &BlockDataset, mats: &SensingMatrixSet) -> Result<KeyPairSet> {
    if ds.is_empty() {
        return Err(Error::Empty("pretraining dataset"));
    }
    let n = ds.block_len();
    let positions = ds.positions();
    let total = ds.len() * positions;
    let mut x = Array2::<f32>::zeros((total, n));
    for (g, gop) in ds.gops.iter().enumerate() {
        x.slice_mut(s![g * positions..(g + 1) * positions, ..])
            .assign(&gop.blocks().index_axis(Axis(0), 0));
    }
    let y = sense_blocks(mats.phi_key(), x.view())?;
    Ok(KeyPairSet { y, x })
}

fn optimizer_step<F: Real>(
    cfg: &TrainConfig,
    params: &mut [F],
    grads: &[F],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    match cfg.optimizer {
        OptimizerKind::Adam => adam_step(params, grads, state, &cfg.hyper()),
        OptimizerKind::Sgd => sgd_step(params, grads, state, cfg.learning_rate),
        OptimizerKind::Adagrad => {
            adagrad_step(params, grads, state, cfg.learning_rate, cfg.adam_eps)
        }
    }
}

/// Trains the key CNN alone on (measurement, block) pairs.
pub fn pretrain_key_cnn(
    pairs: &KeyPairSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(CnnParams<f32>, TrainLog)> {
    cfg.validate()?;
    model_cfg.validate()?;
    let count = pairs.y.nrows();
    if count == 0 {
        return Err(Error::Empty("pretraining dataset"));
    }
    if pairs.x.nrows() != count
        || pairs.y.ncols() != model_cfg.m_key
        || pairs.x.ncols() != model_cfg.n()
    {
        return Err(Error::shape(
            "pretrain pairs",
            format!("({count}, {}) / ({count}, {})", model_cfg.m_key, model_cfg.n()),
            format!("{:?} / {:?}", pairs.y.dim(), pairs.x.dim()),
        ));
    }

    let spec = model_cfg.key_spec();
    let mut params = CnnParams::<f32>::init(spec.clone(), mix_seed(cfg.seed, &[1]));
    let mut state = OptimizerState::new(params.store().values().len());
    let mut sampler = BatchSampler::new(count, mix_seed(cfg.seed, &[2]));
    let mut log = TrainLog::with_capacity(cfg.step_count);
    let t0 = Instant::now();

    for step in 1..=cfg.step_count {
        let idx = sampler.next_batch(cfg.batch_size);
        let b = idx.len();
        let mut y = Array2::<f32>::zeros((b, model_cfg.m_key));
        let mut x = Array2::<f32>::zeros((b, model_cfg.n()));
        for (row, &i) in idx.iter().enumerate() {
            y.row_mut(row).assign(&pairs.y.row(i));
            x.row_mut(row).assign(&pairs.x.row(i));
        }

        let (loss, grads) = model::cnn_loss_and_grads(&params, y.view(), x.view())?;
        let mut gvals = grads;
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(gvals.values_mut(), max);
        }
        optimizer_step(cfg, params.store_mut().values_mut(), gvals.values(), &mut state)?;
        log.push(StepRecord {
            step,
            phase: Phase::Pretrain,
            loss,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            psnr: None,
        });
    }
    Ok((params, log))
}

/// End-to-end training of the full decoder.
///
/// The key CNN starts from `pretrained` when given (the standard protocol)
/// and from fresh initialization otherwise; everything else always starts
/// fresh. Returns the trained parameters, the per-step log, and the final
/// optimizer state for checkpointing.
pub fn train_full(
    ds: &BlockDataset,
    mats: &SensingMatrixSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pretrained: Option<&CnnParams<f32>>,
) -> Result<(DecoderParams<f32>, TrainLog, OptimizerState<f32>)> {
    cfg.validate()?;
    model_cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let meta = mats.meta();
    if meta.m_key != model_cfg.m_key
        || meta.m_non_key != model_cfg.m_non_key
        || meta.n != model_cfg.n()
    {
        return Err(Error::shape(
            "train_full sensing",
            format!(
                "m_key {}, m_non_key {}, n {}",
                model_cfg.m_key,
                model_cfg.m_non_key,
                model_cfg.n()
            ),
            format!("m_key {}, m_non_key {}, n {}", meta.m_key, meta.m_non_key, meta.n),
        ));
    }

    let measurements: Vec<MeasurementGop> = ds
        .gops
        .iter()
        .map(|g| sense_gop(mats, g))
        .collect::<Result<_>>()?;

    let mut params = model::init_params::<f32>(model_cfg, mix_seed(cfg.seed, &[3]))?;
    if let Some(pre) = pretrained {
        params.import_key_cnn(pre)?;
    }
    let mut state = OptimizerState::new(params.store().values().len());
    let mut sampler = BatchSampler::new(ds.len(), mix_seed(cfg.seed, &[4]));
    let mut log = TrainLog::with_capacity(cfg.step_count);
    let t0 = Instant::now();

    for step in 1..=cfg.step_count {
        let idx = sampler.next_batch(cfg.batch_size);
        let mgs: Vec<&MeasurementGop> = idx.iter().map(|&i| &measurements[i]).collect();
        let targets: Vec<&GopBlockSequence> = idx.iter().map(|&i| &ds.gops[i]).collect();

        let result = model::batch_loss_and_grads(&params, &mgs, &targets, cfg.mode)?;
        let mut grads = result.grads;
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(grads.store_mut().values_mut(), max);
        }
        optimizer_step(cfg, params.store_mut().values_mut(), grads.values(), &mut state)?;

        let batch_psnr = if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            Some(batch_reconstruction_psnr(
                &result.outputs,
                &targets,
                ds.grid_rows,
                ds.grid_cols,
                ds.block_size,
            )?)
        } else {
            None
        };
        log.push(StepRecord {
            step,
            phase: Phase::Full,
            loss: result.loss,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            psnr: batch_psnr,
        });
    }
    Ok((params, log, state))
}

/// Mean frame PSNR of clamped reconstructions against their targets.
fn batch_reconstruction_psnr(
    outputs: &[Array2<f32>],
    targets: &[&GopBlockSequence],
    rows: usize,
    cols: usize,
    block_size: usize,
) -> Result<f64> {
    let recons = model::split_outputs(outputs, targets.len(), (rows, cols), block_size);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (recon, target) in recons.iter().zip(targets.iter()) {
        for t in 0..target.t() {
            let frame = recon.frame_clamped(t);
            let reference = target.frame(t);
            acc += psnr(reference.view(), frame.view())?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Writes a training log as line-delimited JSON records.
pub fn write_train_log(log: &TrainLog, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in log {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
