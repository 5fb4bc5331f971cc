//! The CSVideoNet decoder: a key CNN for the densely-measured first frame,
//! one shared non-key CNN for the remaining frames, and a synthesizing LSTM
//! with an output projection that fuses the whole GOP.

mod cnn;
mod layers;
mod lstm;
mod store;

pub use cnn::{feature_map_plan, CnnSpec};
pub use lstm::{LstmSpec, LstmState};
pub use store::{FlatTensors, SegmentSpec, TensorLayout};

use crate::error::{Error, Result};
use crate::ingest::GopBlockSequence;
use crate::scalar::Real;
use crate::sensing::MeasurementGop;
use cnn::{cnn_backward, cnn_forward, CnnCache};
use lstm::{lstm_sequence_backward, lstm_sequence_forward, LstmCache};
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Whether reconstruction runs the full decoder or bypasses the LSTM
/// (the CNN-only ablation arm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    #[default]
    Full,
    CnnOnly,
}

/// Architecture hyperparameters. The defaults reproduce the reference
/// design: 32x32 blocks, T = 10, an 8-stage key CNN with channel plan
/// [128, 64, 32, 32, 16, 16, 1], a 3-stage non-key CNN [64, 16, 1], and a
/// single 1024-unit LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub block_size: usize,
    pub t: usize,
    pub m_key: usize,
    pub m_non_key: usize,
    pub key_channels: Vec<usize>,
    pub non_key_channels: Vec<usize>,
    pub hidden_size: usize,
    pub lstm_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            block_size: 32,
            t: 10,
            m_key: 40,
            m_non_key: 10,
            key_channels: vec![128, 64, 32, 32, 16, 16, 1],
            non_key_channels: vec![64, 16, 1],
            hidden_size: 1024,
            lstm_layers: 1,
        }
    }
}

impl ModelConfig {
    /// Flattened block length.
    pub fn n(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::Config(format!("t must be at least 2, got {}", self.t)));
        }
        if self.block_size == 0 || self.hidden_size == 0 || self.lstm_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.m_non_key == 0 || self.m_key < self.m_non_key {
            return Err(Error::Config(format!(
                "need m_key >= m_non_key >= 1, got {} and {}",
                self.m_key, self.m_non_key
            )));
        }
        for (name, plan) in [
            ("key_channels", &self.key_channels),
            ("non_key_channels", &self.non_key_channels),
        ] {
            if plan.is_empty() || *plan.last().unwrap() != 1 || plan.iter().any(|&c| c == 0) {
                return Err(Error::Config(format!(
                    "{name} must be a non-empty plan ending in 1, got {plan:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn key_spec(&self) -> CnnSpec {
        CnnSpec {
            m: self.m_key,
            block_size: self.block_size,
            channels: self.key_channels.clone(),
        }
    }

    pub fn non_key_spec(&self) -> CnnSpec {
        CnnSpec {
            m: self.m_non_key,
            block_size: self.block_size,
            channels: self.non_key_channels.clone(),
        }
    }

    pub fn lstm_spec(&self) -> LstmSpec {
        LstmSpec {
            input_size: self.n(),
            hidden_size: self.hidden_size,
            layers: self.lstm_layers,
        }
    }

    /// Layout of every trainable tensor: key CNN, shared non-key CNN, then
    /// the LSTM stack and output projection.
    pub fn layout(&self) -> Arc<TensorLayout> {
        let mut segs = self.key_spec().segments("key.");
        segs.extend(self.non_key_spec().segments("nonkey."));
        segs.extend(self.lstm_spec().segments(""));
        TensorLayout::build(segs)
    }
}

/// Fills a store with fan-in-scaled uniform weights (`U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in))`, fan-in = columns) and zero biases, drawing in layout
/// order from a ChaCha8 stream.
fn init_store<F: Real>(store: &mut FlatTensors<F>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<SegmentSpec> = store.layout().entries().to_vec();
    for spec in entries {
        if spec.shape.len() == 2 {
            let bound = 1.0 / (spec.shape[1] as f64).sqrt();
            let mut view = store.view2_mut(&spec.name);
            for v in view.iter_mut() {
                *v = F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound);
            }
        }
        // Rank-1 segments are biases and stay zero here.
    }
}

/// Standalone parameters for one measurement-to-block CNN (either rate).
#[derive(Debug, Clone)]
pub struct CnnParams<F> {
    spec: CnnSpec,
    store: FlatTensors<F>,
}

impl<F: Real> CnnParams<F> {
    /// Deterministic initialization from a seed.
    pub fn init(spec: CnnSpec, seed: u64) -> Self {
        let mut store = FlatTensors::zeros(spec.layout());
        init_store(&mut store, seed);
        Self { spec, store }
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn store(&self) -> &FlatTensors<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut FlatTensors<F> {
        &mut self.store
    }

    /// Reconstructs a batch of blocks from measurement rows `(B, m)`.
    pub fn forward(&self, y: ArrayView2<F>) -> Result<Array2<F>> {
        if y.ncols() != self.spec.m {
            return Err(Error::shape(
                "cnn forward",
                format!("measurements of length {}", self.spec.m),
                format!("{}", y.ncols()),
            ));
        }
        let out = cnn_forward(&self.spec, &self.store, "", y, None);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cnn forward"));
        }
        Ok(out)
    }

    /// Reconstructs a single block as a `block_size x block_size` array.
    pub fn forward_block(&self, y: ArrayView1<F>) -> Result<Array2<F>> {
        let bs = self.spec.block_size;
        let row = y.insert_axis(Axis(0));
        let out = self.forward(row)?;
        Ok(out
            .into_shape_with_order((bs, bs))
            .expect("one block reshapes to its square"))
    }
}

/// All trainable decoder parameters in one flat store.
#[derive(Debug, Clone)]
pub struct DecoderParams<F> {
    config: ModelConfig,
    store: FlatTensors<F>,
}

/// Gradients with the same layout as [`DecoderParams`].
#[derive(Debug, Clone)]
pub struct DecoderGrads<F> {
    store: FlatTensors<F>,
}

impl<F: Real> DecoderGrads<F> {
    pub fn values(&self) -> &[F] {
        self.store.values()
    }

    pub fn store(&self) -> &FlatTensors<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut FlatTensors<F> {
        &mut self.store
    }

    /// Gradient slice for one named tensor.
    pub fn segment(&self, name: &str) -> &[F] {
        let spec = self.store.layout().spec(name);
        &self.store.values()[spec.offset..spec.offset + spec.len()]
    }
}

/// Deterministic parameter initialization: fan-in uniform weights, zero
/// biases, LSTM forget-gate biases set to 1.
pub fn init_params<F: Real>(config: &ModelConfig, seed: u64) -> Result<DecoderParams<F>> {
    config.validate()?;
    let mut store = FlatTensors::zeros(config.layout());
    init_store(&mut store, seed);
    let h = config.hidden_size;
    for l in 0..config.lstm_layers {
        let mut b = store.view1_mut(&format!("lstm{l}.b"));
        for v in b.slice_mut(s![h..2 * h]).iter_mut() {
            *v = F::one();
        }
    }
    Ok(DecoderParams {
        config: config.clone(),
        store,
    })
}

impl<F: Real> DecoderParams<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &FlatTensors<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut FlatTensors<F> {
        &mut self.store
    }

    pub fn zero_grads(&self) -> DecoderGrads<F> {
        DecoderGrads {
            store: FlatTensors::zeros(Arc::clone(self.store.layout())),
        }
    }

    /// Copies the key-CNN segments out as standalone parameters.
    pub fn extract_key_cnn(&self) -> CnnParams<F> {
        let spec = self.config.key_spec();
        let mut cnn = CnnParams {
            spec: spec.clone(),
            store: FlatTensors::zeros(spec.layout()),
        };
        for entry in cnn.store.layout().entries().to_vec() {
            let src = self.store.segment_values(&format!("key.{}", entry.name));
            cnn.store
                .assign_segment(&entry.name, ArrayView1::from(src))
                .expect("layouts agree by construction");
        }
        cnn
    }

    /// Installs pretrained key-CNN parameters into the decoder.
    pub fn import_key_cnn(&mut self, pretrained: &CnnParams<F>) -> Result<()> {
        if *pretrained.spec() != self.config.key_spec() {
            return Err(Error::shape(
                "import_key_cnn",
                format!("{:?}", self.config.key_spec()),
                format!("{:?}", pretrained.spec()),
            ));
        }
        for entry in pretrained.store.layout().entries().to_vec() {
            let src = pretrained.store.segment_values(&entry.name);
            self.store
                .assign_segment(&format!("key.{}", entry.name), ArrayView1::from(src))?;
        }
        Ok(())
    }

    /// One LSTM stack step (no projection): the public recurrence contract.
    pub fn lstm_step(&self, x: ArrayView2<F>, state: &LstmState<F>) -> Result<LstmState<F>> {
        lstm::lstm_step(&self.config.lstm_spec(), &self.store, "", x, state)
    }

    pub fn lstm_zero_state(&self, batch: usize) -> LstmState<F> {
        LstmState::zeros(&self.config.lstm_spec(), batch)
    }

    /// Key-branch reconstruction of one measurement vector.
    pub fn key_cnn_forward(&self, y: ArrayView1<F>) -> Result<Array2<F>> {
        let spec = self.config.key_spec();
        forward_block_with(&spec, &self.store, "key.", y)
    }

    /// Non-key-branch reconstruction of one measurement vector.
    pub fn non_key_cnn_forward(&self, y: ArrayView1<F>) -> Result<Array2<F>> {
        let spec = self.config.non_key_spec();
        forward_block_with(&spec, &self.store, "nonkey.", y)
    }
}

fn forward_block_with<F: Real>(
    spec: &CnnSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    y: ArrayView1<F>,
) -> Result<Array2<F>> {
    if y.len() != spec.m {
        return Err(Error::shape(
            "cnn forward",
            format!("measurements of length {}", spec.m),
            format!("{}", y.len()),
        ));
    }
    let bs = spec.block_size;
    let row = y.insert_axis(Axis(0));
    let out = cnn_forward(spec, store, prefix, row, None);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cnn forward"));
    }
    Ok(out
        .into_shape_with_order((bs, bs))
        .expect("one block reshapes to its square"))
}

/// A decoded GOP: `t` frames of flattened blocks plus the grid geometry.
#[derive(Debug, Clone)]
pub struct ReconstructedGop<F> {
    /// Shape `(t, positions, block_len)`.
    pub blocks: Array3<F>,
    pub grid: (usize, usize),
    pub block_size: usize,
}

impl<F: Real> ReconstructedGop<F> {
    /// Logical output shape `(t, grid_rows, grid_cols, block, block)`.
    pub fn shape5(&self) -> (usize, usize, usize, usize, usize) {
        (
            self.blocks.len_of(Axis(0)),
            self.grid.0,
            self.grid.1,
            self.block_size,
            self.block_size,
        )
    }

    /// Assembles frame `t` into a full `(rows*bs, cols*bs)` plane.
    pub fn frame(&self, t: usize) -> Array2<F> {
        let (rows, cols) = self.grid;
        let b = self.block_size;
        let mut out = Array2::<F>::zeros((rows * b, cols * b));
        for r in 0..rows {
            for c in 0..cols {
                let block = self.blocks.slice(s![t, r * cols + c, ..]);
                for pr in 0..b {
                    for pc in 0..b {
                        out[[r * b + pr, c * b + pc]] = block[pr * b + pc];
                    }
                }
            }
        }
        out
    }

    /// Same as [`Self::frame`] with values clamped to [0,1] for metrics.
    pub fn frame_clamped(&self, t: usize) -> Array2<F> {
        let mut f = self.frame(t);
        f.mapv_inplace(|v| v.max(F::zero()).min(F::one()));
        f
    }
}

pub(crate) struct BatchCaches<F> {
    key: Option<CnnCache<F>>,
    nonkey: Option<CnnCache<F>>,
    lstm: Option<LstmCache<F>>,
    /// Per-frame CNN outputs `(sequences, n)`, the LSTM inputs.
    zs: Vec<Array2<F>>,
}

fn check_batch_shapes<F: Real>(
    config: &ModelConfig,
    mgs: &[&MeasurementGop],
) -> Result<(usize, usize)> {
    let first = mgs.first().ok_or(Error::Empty("measurement batch"))?;
    let positions = first.grid.0 * first.grid.1;
    for mg in mgs {
        if mg.m_key != config.m_key
            || mg.m_non_key != config.m_non_key
            || mg.t != config.t
            || mg.n != config.n()
            || mg.grid != first.grid
        {
            return Err(Error::shape(
                "decoder batch",
                format!(
                    "m_key {}, m_non_key {}, t {}, n {}, grid {:?}",
                    config.m_key,
                    config.m_non_key,
                    config.t,
                    config.n(),
                    first.grid
                ),
                format!(
                    "m_key {}, m_non_key {}, t {}, n {}, grid {:?}",
                    mg.m_key, mg.m_non_key, mg.t, mg.n, mg.grid
                ),
            ));
        }
    }
    Ok((positions, mgs.len() * positions))
}

/// Runs the decoder over a batch of GOPs. Sequences (one per GOP x grid
/// position) are processed together; row `g * positions + p` of each
/// per-frame matrix belongs to GOP `g`, position `p`.
pub(crate) fn forward_batch<F: Real>(
    params: &DecoderParams<F>,
    mgs: &[&MeasurementGop],
    mode: DecoderMode,
    want_cache: bool,
) -> Result<(Vec<Array2<F>>, BatchCaches<F>)> {
    let config = &params.config;
    let (positions, seqs) = check_batch_shapes(config, mgs)?;
    let t = config.t;
    let n = config.n();

    // Gather measurement batches; non-key rows are frame-major so that the
    // rows of frame t occupy one contiguous band.
    let mut key_y = Array2::<F>::zeros((seqs, config.m_key));
    let mut nk_y = Array2::<F>::zeros(((t - 1) * seqs, config.m_non_key));
    for (g, mg) in mgs.iter().enumerate() {
        for p in 0..positions {
            let srow = g * positions + p;
            for (j, &v) in mg.key.row(p).iter().enumerate() {
                key_y[[srow, j]] = F::from_f64(v as f64);
            }
            for ti in 1..t {
                let row = (ti - 1) * seqs + srow;
                for (j, &v) in mg.non_key.slice(s![ti - 1, p, ..]).iter().enumerate() {
                    nk_y[[row, j]] = F::from_f64(v as f64);
                }
            }
        }
    }

    let mut caches = BatchCaches {
        key: None,
        nonkey: None,
        lstm: None,
        zs: Vec::new(),
    };

    let key_out = cnn_forward(
        &config.key_spec(),
        &params.store,
        "key.",
        key_y.view(),
        want_cache.then_some(&mut caches.key),
    );
    let nk_out = cnn_forward(
        &config.non_key_spec(),
        &params.store,
        "nonkey.",
        nk_y.view(),
        want_cache.then_some(&mut caches.nonkey),
    );

    let mut zs: Vec<Array2<F>> = Vec::with_capacity(t);
    zs.push(key_out);
    for ti in 1..t {
        let band = nk_out.slice(s![(ti - 1) * seqs..ti * seqs, ..]).to_owned();
        zs.push(band);
    }

    let outs = match mode {
        DecoderMode::Full => lstm_sequence_forward(
            &config.lstm_spec(),
            &params.store,
            "",
            &zs,
            want_cache.then_some(&mut caches.lstm),
        ),
        DecoderMode::CnnOnly => zs.clone(),
    };
    if want_cache {
        caches.zs = zs;
    }

    debug_assert!(outs.iter().all(|o| o.dim() == (seqs, n)));
    Ok((outs, caches))
}

fn recon_from_outputs<F: Real>(
    outs: &[Array2<F>],
    gop_index: usize,
    positions: usize,
    grid: (usize, usize),
    block_size: usize,
) -> ReconstructedGop<F> {
    let t = outs.len();
    let n = block_size * block_size;
    let mut blocks = Array3::<F>::zeros((t, positions, n));
    for (ti, out) in outs.iter().enumerate() {
        let band = out.slice(s![gop_index * positions..(gop_index + 1) * positions, ..]);
        blocks.index_axis_mut(Axis(0), ti).assign(&band);
    }
    ReconstructedGop {
        blocks,
        grid,
        block_size,
    }
}

/// Full decoder reconstruction of one compressed GOP.
pub fn csvideonet_forward<F: Real>(
    params: &DecoderParams<F>,
    mg: &MeasurementGop,
) -> Result<ReconstructedGop<F>> {
    let (outs, _) = forward_batch(params, &[mg], DecoderMode::Full, false)?;
    let positions = mg.grid.0 * mg.grid.1;
    Ok(recon_from_outputs(&outs, 0, positions, mg.grid, params.config.block_size))
}

/// Ablation arm: per-frame CNN reconstructions with the LSTM bypassed.
pub fn cnn_only_forward<F: Real>(
    params: &DecoderParams<F>,
    mg: &MeasurementGop,
) -> Result<ReconstructedGop<F>> {
    let (outs, _) = forward_batch(params, &[mg], DecoderMode::CnnOnly, false)?;
    let positions = mg.grid.0 * mg.grid.1;
    Ok(recon_from_outputs(&outs, 0, positions, mg.grid, params.config.block_size))
}

/// Gathers frame `ti` of every GOP as a `(sequences, n)` target matrix.
fn gather_targets<F: Real>(
    targets: &[&GopBlockSequence],
    ti: usize,
    positions: usize,
    n: usize,
) -> Array2<F> {
    let seqs = targets.len() * positions;
    let mut out = Array2::<F>::zeros((seqs, n));
    for (g, gop) in targets.iter().enumerate() {
        let frame = gop.blocks().index_axis(Axis(0), ti);
        for p in 0..positions {
            for (j, &v) in frame.row(p).iter().enumerate() {
                out[[g * positions + p, j]] = F::from_f64(v as f64);
            }
        }
    }
    out
}

pub(crate) struct BatchResult<F> {
    pub loss: f64,
    pub grads: DecoderGrads<F>,
    /// Per-frame outputs kept for cheap training-time metrics.
    pub outputs: Vec<Array2<F>>,
}

/// Forward + backward over a batch: the training loss (half mean squared
/// error, averaged over batch items) and exact gradients for every
/// parameter.
pub(crate) fn batch_loss_and_grads<F: Real>(
    params: &DecoderParams<F>,
    mgs: &[&MeasurementGop],
    targets: &[&GopBlockSequence],
    mode: DecoderMode,
) -> Result<BatchResult<F>> {
    let config = &params.config;
    if mgs.len() != targets.len() {
        return Err(Error::shape(
            "batch_loss_and_grads",
            format!("{} targets", mgs.len()),
            format!("{}", targets.len()),
        ));
    }
    for (mg, gop) in mgs.iter().zip(targets.iter()) {
        if gop.t() != mg.t || gop.grid() != mg.grid || gop.block_size() != config.block_size {
            return Err(Error::shape(
                "batch targets",
                format!("t {}, grid {:?}, block {}", mg.t, mg.grid, config.block_size),
                format!(
                    "t {}, grid {:?}, block {}",
                    gop.t(),
                    gop.grid(),
                    gop.block_size()
                ),
            ));
        }
    }

    let (positions, _) = check_batch_shapes(config, mgs)?;
    let (outs, caches) = forward_batch(params, mgs, mode, true)?;
    let batch_items = F::from_f64(mgs.len() as f64);
    let n = config.n();

    // Loss: (1/2N) * sum_i ||f(y_i) - x_i||^2 with i over batch GOPs.
    let mut loss_acc = 0.0f64;
    let mut d_outs: Vec<Array2<F>> = Vec::with_capacity(outs.len());
    for (ti, out) in outs.iter().enumerate() {
        let target = gather_targets::<F>(targets, ti, positions, n);
        let mut diff = out - &target;
        loss_acc += diff.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        diff.mapv_inplace(|v| v / batch_items);
        d_outs.push(diff);
    }
    let loss = loss_acc / (2.0 * mgs.len() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }

    let mut grads = params.zero_grads();
    let dzs: Vec<Array2<F>> = match mode {
        DecoderMode::Full => lstm_sequence_backward(
            &config.lstm_spec(),
            &params.store,
            "",
            &caches.zs,
            caches.lstm.as_ref().expect("cache requested"),
            &d_outs,
            &mut grads.store,
        ),
        DecoderMode::CnnOnly => d_outs,
    };

    // Key branch: frame 0 only.
    let _ = cnn_backward(
        &config.key_spec(),
        &params.store,
        "key.",
        caches.key.as_ref().expect("cache requested"),
        dzs[0].view(),
        &mut grads.store,
    );

    // Non-key branch: frames 1..T in one shared-weight batch.
    let seqs = dzs[0].nrows();
    let mut d_nk = Array2::<F>::zeros(((config.t - 1) * seqs, n));
    for ti in 1..config.t {
        d_nk
            .slice_mut(s![(ti - 1) * seqs..ti * seqs, ..])
            .assign(&dzs[ti]);
    }
    let _ = cnn_backward(
        &config.non_key_spec(),
        &params.store,
        "nonkey.",
        caches.nonkey.as_ref().expect("cache requested"),
        d_nk.view(),
        &mut grads.store,
    );

    Ok(BatchResult {
        loss,
        grads,
        outputs: outs,
    })
}

/// Half-MSE loss over a block batch and exact gradients for one standalone
/// CNN (the pretraining objective; batch items are blocks).
pub fn cnn_loss_and_grads<F: Real>(
    params: &CnnParams<F>,
    y: ArrayView2<F>,
    target: ArrayView2<F>,
) -> Result<(f64, FlatTensors<F>)> {
    if y.nrows() != target.nrows() || target.ncols() != params.spec.n() {
        return Err(Error::shape(
            "cnn_loss_and_grads",
            format!("targets ({}, {})", y.nrows(), params.spec.n()),
            format!("{:?}", target.dim()),
        ));
    }
    let mut cache = None;
    let out = cnn_forward(&params.spec, &params.store, "", y, Some(&mut cache));
    let items = F::from_f64(y.nrows() as f64);

    let mut diff = &out - &target;
    let loss = diff.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / (2.0 * y.nrows() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite("pretraining loss"));
    }
    diff.mapv_inplace(|v| v / items);

    let mut grads = FlatTensors::zeros(Arc::clone(params.store.layout()));
    let _ = cnn_backward(
        &params.spec,
        &params.store,
        "",
        cache.as_ref().expect("cache requested"),
        diff.view(),
        &mut grads,
    );
    Ok((loss, grads))
}

/// Exact gradients of the training loss for a batch of GOPs.
pub fn backward<F: Real>(
    params: &DecoderParams<F>,
    mgs: &[&MeasurementGop],
    targets: &[&GopBlockSequence],
    mode: DecoderMode,
) -> Result<(f64, DecoderGrads<F>)> {
    let r = batch_loss_and_grads(params, mgs, targets, mode)?;
    Ok((r.loss, r.grads))
}

/// Splits a batch of decoder outputs back into per-GOP reconstructions.
pub(crate) fn split_outputs<F: Real>(
    outs: &[Array2<F>],
    gop_count: usize,
    grid: (usize, usize),
    block_size: usize,
) -> Vec<ReconstructedGop<F>> {
    let positions = grid.0 * grid.1;
    (0..gop_count)
        .map(|g| recon_from_outputs(outs, g, positions, grid, block_size))
        .collect()
}

/// Empirical standard deviation of one named segment (initialization
/// diagnostics).
pub fn segment_std<F: Real>(store: &FlatTensors<F>, name: &str) -> f64 {
    let vals = store.segment_values(name);
    let mean = vals.iter().map(|v| v.as_f64()).sum::<f64>() / vals.len() as f64;
    let var = vals
        .iter()
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / vals.len() as f64;
    var.sqrt()
}
