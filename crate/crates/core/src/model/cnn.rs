//! The measurement-to-block CNN used for both frame roles.
//!
//! A dense stage lifts the m-dimensional measurement to one block-sized
//! feature map; a stack of size-preserving 3x3 convolutions with a
//! monotonically decreasing channel plan refines it down to a single map.
//! ReLU follows every stage except the final convolution.

use super::layers::{
    conv3x3_backward, conv3x3_forward, fc_backward, fc_forward, relu_backward_inplace,
    relu_backward_inplace3, relu_inplace, relu_inplace3,
};
use super::store::{FlatTensors, TensorLayout};
use crate::scalar::Real;
use ndarray::{Array2, Array3, ArrayView2};

/// Geometry of one CNN branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnSpec {
    /// Measurement length feeding the dense stage.
    pub m: usize,
    pub block_size: usize,
    /// Output channels of each convolution; the last entry must be 1.
    pub channels: Vec<usize>,
}

impl CnnSpec {
    pub fn n(&self) -> usize {
        self.block_size * self.block_size
    }

    /// `(c_in, c_out)` per convolution layer; the dense stage emits 1 map.
    pub fn channel_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.channels.len());
        let mut c_in = 1usize;
        for &c_out in &self.channels {
            pairs.push((c_in, c_out));
            c_in = c_out;
        }
        pairs
    }

    /// Layout segments with the given name prefix (e.g. `"key."`).
    pub fn segments(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut segs = vec![
            (format!("{prefix}fc.w"), vec![self.n(), self.m]),
            (format!("{prefix}fc.b"), vec![self.n()]),
        ];
        for (i, (c_in, c_out)) in self.channel_pairs().into_iter().enumerate() {
            segs.push((format!("{prefix}conv{i}.w"), vec![c_out, c_in * 9]));
            segs.push((format!("{prefix}conv{i}.b"), vec![c_out]));
        }
        segs
    }

    pub fn layout(&self) -> std::sync::Arc<TensorLayout> {
        TensorLayout::build(self.segments(""))
    }
}

/// Stored forward activations needed by the backward pass.
pub(crate) struct CnnCache<F> {
    /// Measurement input `(B, m)`.
    y: Array2<F>,
    /// Input of each convolution `(B, c_in, npix)`; index 0 is the post-ReLU
    /// dense output reshaped to one map.
    conv_inputs: Vec<Array3<F>>,
}

/// Runs the CNN on a measurement batch `(B, m)`, producing blocks `(B, n)`.
/// Pass `cache` when a backward pass will follow.
pub(crate) fn cnn_forward<F: Real>(
    spec: &CnnSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    y: ArrayView2<F>,
    mut cache: Option<&mut Option<CnnCache<F>>>,
) -> Array2<F> {
    let batch = y.nrows();
    let npix = spec.n();
    debug_assert_eq!(y.ncols(), spec.m, "measurement length mismatch");

    let mut fc = fc_forward(
        store.view2(&format!("{prefix}fc.w")),
        store.view1(&format!("{prefix}fc.b")),
        y,
    );
    relu_inplace(&mut fc);

    let mut act = fc
        .into_shape_with_order((batch, 1, npix))
        .expect("dense output reshapes to one map");

    let pairs = spec.channel_pairs();
    for (i, _) in pairs.iter().enumerate() {
        let w = store.view2(&format!("{prefix}conv{i}.w"));
        let b = store.view1(&format!("{prefix}conv{i}.b"));
        let mut out = conv3x3_forward(w, b, act.view(), spec.block_size);
        let last = i + 1 == pairs.len();
        if !last {
            relu_inplace3(&mut out);
        }
        if let Some(c) = cache.as_deref_mut() {
            match c {
                Some(c) => c.conv_inputs.push(act),
                None => {
                    *c = Some(CnnCache {
                        y: y.to_owned(),
                        conv_inputs: vec![act],
                    });
                }
            }
        }
        act = out;
    }

    act.into_shape_with_order((batch, npix))
        .expect("final map flattens to a block")
}

/// Backward pass. Accumulates parameter gradients into `grads` (so repeated
/// calls realize weight sharing) and returns the measurement gradient.
pub(crate) fn cnn_backward<F: Real>(
    spec: &CnnSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    cache: &CnnCache<F>,
    d_out: ArrayView2<F>,
    grads: &mut FlatTensors<F>,
) -> Array2<F> {
    let batch = d_out.nrows();
    let npix = spec.n();
    let pairs = spec.channel_pairs();
    debug_assert_eq!(cache.conv_inputs.len(), pairs.len());

    let mut d = d_out
        .to_owned()
        .into_shape_with_order((batch, 1, npix))
        .expect("block gradient reshapes to one map");

    for i in (0..pairs.len()).rev() {
        let w = store.view2(&format!("{prefix}conv{i}.w"));
        let x = &cache.conv_inputs[i];
        let (mut dx, dw, db) = conv3x3_backward(w, x.view(), d.view(), spec.block_size);
        grads.add_to_segment(
            &format!("{prefix}conv{i}.w"),
            dw.view()
                .into_shape_with_order(dw.len())
                .expect("contiguous"),
        );
        grads.add_to_segment(&format!("{prefix}conv{i}.b"), db.view());
        if i > 0 {
            // The input of this layer is the ReLU output of the previous one.
            relu_backward_inplace3(&mut dx, x.view());
        }
        d = dx;
    }

    // Dense stage: d currently holds the gradient at the post-ReLU map.
    let fc_post = cache.conv_inputs[0]
        .view()
        .into_shape_with_order((batch, npix))
        .expect("contiguous");
    let mut d_fc = d
        .into_shape_with_order((batch, npix))
        .expect("contiguous");
    relu_backward_inplace(&mut d_fc, fc_post);

    let w = store.view2(&format!("{prefix}fc.w"));
    let (dy, dw, db) = fc_backward(w, cache.y.view(), d_fc.view());
    grads.add_to_segment(
        &format!("{prefix}fc.w"),
        dw.view()
            .into_shape_with_order(dw.len())
            .expect("contiguous"),
    );
    grads.add_to_segment(&format!("{prefix}fc.b"), db.view());
    dy
}

/// Returns every intermediate feature-map channel count and spatial size,
/// used to assert the no-downsampling invariant.
pub fn feature_map_plan(spec: &CnnSpec) -> Vec<(usize, usize, usize)> {
    let bs = spec.block_size;
    let mut plan = vec![(1, bs, bs)];
    for (_, c_out) in spec.channel_pairs() {
        plan.push((c_out, bs, bs));
    }
    plan
}
