//! The synthesizing LSTM: consumes the per-frame CNN reconstructions of a
//! GOP in order and re-emits every frame, letting later frames borrow
//! spatial detail that entered at the key frame.
//!
//! Gate packing along the `4H` axis is `[input, forget, cell, output]`.
//! State starts at zero; a dense projection maps each hidden state back to
//! a flattened block.

use super::layers::{fc_backward, fc_forward};
use super::store::FlatTensors;
use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{concatenate, Array2, ArrayView2, Axis, s};

/// Geometry of the recurrent stack (projection included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmSpec {
    /// Flattened block length; both the step input and the projection output.
    pub input_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
}

impl LstmSpec {
    pub fn segments(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_size;
        let mut segs = Vec::new();
        for l in 0..self.layers {
            let in_l = if l == 0 { self.input_size } else { h };
            segs.push((format!("{prefix}lstm{l}.wx"), vec![4 * h, in_l]));
            segs.push((format!("{prefix}lstm{l}.wh"), vec![4 * h, h]));
            segs.push((format!("{prefix}lstm{l}.b"), vec![4 * h]));
        }
        segs.push((format!("{prefix}proj.w"), vec![self.input_size, h]));
        segs.push((format!("{prefix}proj.b"), vec![self.input_size]));
        segs
    }
}

/// Recurrent state, one `(batch, hidden)` pair per layer.
#[derive(Debug, Clone)]
pub struct LstmState<F> {
    pub h: Vec<Array2<F>>,
    pub c: Vec<Array2<F>>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(spec: &LstmSpec, batch: usize) -> Self {
        let zero = || Array2::<F>::zeros((batch, spec.hidden_size));
        Self {
            h: (0..spec.layers).map(|_| zero()).collect(),
            c: (0..spec.layers).map(|_| zero()).collect(),
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

struct GateActivations<F> {
    i: Array2<F>,
    f: Array2<F>,
    g: Array2<F>,
    o: Array2<F>,
}

/// One cell update for layer `l`: returns gate activations and the new
/// `(h, c)`.
fn cell_step<F: Real>(
    store: &FlatTensors<F>,
    prefix: &str,
    l: usize,
    x: ArrayView2<F>,
    h_prev: &Array2<F>,
    c_prev: &Array2<F>,
) -> (GateActivations<F>, Array2<F>, Array2<F>, Array2<F>) {
    let h = h_prev.ncols();
    let wx = store.view2(&format!("{prefix}lstm{l}.wx"));
    let wh = store.view2(&format!("{prefix}lstm{l}.wh"));
    let b = store.view1(&format!("{prefix}lstm{l}.b"));

    let mut pre = x.dot(&wx.t()) + h_prev.dot(&wh.t());
    pre += &b;

    let i = pre.slice(s![.., 0..h]).mapv(sigmoid);
    let f = pre.slice(s![.., h..2 * h]).mapv(sigmoid);
    let g = pre.slice(s![.., 2 * h..3 * h]).mapv(|v| v.tanh());
    let o = pre.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);

    let c_new = &f * c_prev + &i * &g;
    let tanh_c = c_new.mapv(|v| v.tanh());
    let h_new = &o * &tanh_c;
    (GateActivations { i, f, g, o }, h_new, c_new, tanh_c)
}

/// Pure single-step update of the whole stack (no projection): the public
/// recurrence contract.
pub(crate) fn lstm_step<F: Real>(
    spec: &LstmSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    x: ArrayView2<F>,
    state: &LstmState<F>,
) -> Result<LstmState<F>> {
    if x.ncols() != spec.input_size {
        return Err(Error::shape(
            "lstm_step",
            format!("input of length {}", spec.input_size),
            format!("{}", x.ncols()),
        ));
    }
    if state.h.len() != spec.layers || state.h[0].nrows() != x.nrows() {
        return Err(Error::shape(
            "lstm_step",
            format!("state for {} layers, batch {}", spec.layers, x.nrows()),
            format!("{} layers, batch {}", state.h.len(), state.h[0].nrows()),
        ));
    }
    let mut next = state.clone();
    let mut input = x.to_owned();
    for l in 0..spec.layers {
        let (_, h_new, c_new, _) =
            cell_step(store, prefix, l, input.view(), &state.h[l], &state.c[l]);
        next.h[l] = h_new;
        next.c[l] = c_new;
        input = next.h[l].clone();
    }
    Ok(next)
}

/// Everything the backward pass needs from a sequence forward run.
/// Indexing: `hs[l][t]` is the hidden state of layer `l` *before* step `t`
/// (`hs[l][0]` is the zero initial state), `gates[l][t]` are the step-`t`
/// activations.
pub(crate) struct LstmCache<F> {
    hs: Vec<Vec<Array2<F>>>,
    cs: Vec<Vec<Array2<F>>>,
    gates: Vec<Vec<GateActivations<F>>>,
    tanh_c: Vec<Vec<Array2<F>>>,
}

/// Runs the stack plus projection over a sequence. Returns the projected
/// outputs per step; fills `cache` when a backward pass will follow.
pub(crate) fn lstm_sequence_forward<F: Real>(
    spec: &LstmSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    inputs: &[Array2<F>],
    mut cache: Option<&mut Option<LstmCache<F>>>,
) -> Vec<Array2<F>> {
    let batch = inputs.first().map_or(0, |x| x.nrows());
    let mut state = LstmState::<F>::zeros(spec, batch);

    let mut c = LstmCache {
        hs: (0..spec.layers).map(|l| vec![state.h[l].clone()]).collect(),
        cs: (0..spec.layers).map(|l| vec![state.c[l].clone()]).collect(),
        gates: (0..spec.layers).map(|_| Vec::new()).collect(),
        tanh_c: (0..spec.layers).map(|_| Vec::new()).collect(),
    };

    let proj_w = store.view2(&format!("{prefix}proj.w"));
    let proj_b = store.view1(&format!("{prefix}proj.b"));

    let mut outputs = Vec::with_capacity(inputs.len());
    for x_t in inputs {
        let mut input = x_t.clone();
        for l in 0..spec.layers {
            let (gates, h_new, c_new, tanh_c) =
                cell_step(store, prefix, l, input.view(), &state.h[l], &state.c[l]);
            state.h[l] = h_new;
            state.c[l] = c_new;
            if cache.is_some() {
                c.hs[l].push(state.h[l].clone());
                c.cs[l].push(state.c[l].clone());
                c.gates[l].push(gates);
                c.tanh_c[l].push(tanh_c);
            }
            input = state.h[l].clone();
        }
        outputs.push(fc_forward(proj_w, proj_b, state.h[spec.layers - 1].view()));
    }
    if let Some(slot) = cache.as_deref_mut() {
        *slot = Some(c);
    }
    outputs
}

/// Backpropagation through time. `d_outputs` holds gradients at the
/// projected outputs; `inputs` are the layer-0 step inputs from the forward
/// pass. Parameter gradients accumulate into `grads`; returns the gradient
/// for every step input.
pub(crate) fn lstm_sequence_backward<F: Real>(
    spec: &LstmSpec,
    store: &FlatTensors<F>,
    prefix: &str,
    inputs: &[Array2<F>],
    cache: &LstmCache<F>,
    d_outputs: &[Array2<F>],
    grads: &mut FlatTensors<F>,
) -> Vec<Array2<F>> {
    let t_len = inputs.len();
    let batch = inputs.first().map_or(0, |x| x.nrows());
    let h_sz = spec.hidden_size;
    let top = spec.layers - 1;

    let proj_w = store.view2(&format!("{prefix}proj.w"));
    let one = F::one();

    let mut dh_carry: Vec<Array2<F>> =
        (0..spec.layers).map(|_| Array2::zeros((batch, h_sz))).collect();
    let mut dc_carry = dh_carry.clone();
    let mut d_inputs: Vec<Array2<F>> = Vec::with_capacity(t_len);

    for t in (0..t_len).rev() {
        // Projection feeds the top layer's hidden state.
        let h_top = &cache.hs[top][t + 1];
        let (dh_proj, dwp, dbp) = fc_backward(proj_w, h_top.view(), d_outputs[t].view());
        grads.add_to_segment(
            &format!("{prefix}proj.w"),
            dwp.view().into_shape_with_order(dwp.len()).expect("contiguous"),
        );
        grads.add_to_segment(&format!("{prefix}proj.b"), dbp.view());

        let mut from_above: Option<Array2<F>> = None;
        let mut d_input_l0: Option<Array2<F>> = None;
        for l in (0..spec.layers).rev() {
            let gates = &cache.gates[l][t];
            let tanh_c = &cache.tanh_c[l][t];
            let c_prev = &cache.cs[l][t];
            let h_prev = &cache.hs[l][t];

            let mut dh = dh_carry[l].clone();
            if l == top {
                dh += &dh_proj;
            }
            if let Some(dx) = from_above.take() {
                dh += &dx;
            }

            // h = o * tanh(c); c = f * c_prev + i * g.
            let d_o = &dh * tanh_c;
            let dc = &dc_carry[l] + &(&dh * &gates.o * &tanh_c.mapv(|v| one - v * v));
            let di = &dc * &gates.g;
            let dg = &dc * &gates.i;
            let df = &dc * c_prev;
            let dc_prev = &dc * &gates.f;

            let d_pre_i = &di * &gates.i.mapv(|v| v * (one - v));
            let d_pre_f = &df * &gates.f.mapv(|v| v * (one - v));
            let d_pre_g = &dg * &gates.g.mapv(|v| one - v * v);
            let d_pre_o = &d_o * &gates.o.mapv(|v| v * (one - v));
            let d_pre = concatenate![Axis(1), d_pre_i, d_pre_f, d_pre_g, d_pre_o];

            let x_l = if l == 0 {
                inputs[t].view()
            } else {
                cache.hs[l - 1][t + 1].view()
            };
            let dwx = d_pre.t().dot(&x_l);
            grads.add_to_segment(
                &format!("{prefix}lstm{l}.wx"),
                dwx.view()
                    .into_shape_with_order(dwx.len())
                    .expect("contiguous"),
            );
            let dwh = d_pre.t().dot(h_prev);
            grads.add_to_segment(
                &format!("{prefix}lstm{l}.wh"),
                dwh.view()
                    .into_shape_with_order(dwh.len())
                    .expect("contiguous"),
            );
            grads.add_to_segment(
                &format!("{prefix}lstm{l}.b"),
                d_pre.sum_axis(Axis(0)).view(),
            );

            let wx = store.view2(&format!("{prefix}lstm{l}.wx"));
            let wh = store.view2(&format!("{prefix}lstm{l}.wh"));
            let dx = d_pre.dot(&wx);
            dh_carry[l] = d_pre.dot(&wh);
            dc_carry[l] = dc_prev;

            if l == 0 {
                d_input_l0 = Some(dx);
            } else {
                from_above = Some(dx);
            }
        }
        d_inputs.push(d_input_l0.expect("layer 0 always produces an input gradient"));
    }
    d_inputs.reverse();
    d_inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn spec(input: usize, hidden: usize, layers: usize) -> LstmSpec {
        LstmSpec {
            input_size: input,
            hidden_size: hidden,
            layers,
        }
    }

    fn store_for(spec: &LstmSpec) -> FlatTensors<f64> {
        let layout = super::super::store::TensorLayout::build(spec.segments(""));
        FlatTensors::<f64>::zeros(Arc::clone(&layout))
    }

    fn randomize(store: &mut FlatTensors<f64>, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in store.values_mut() {
            *v = (rng.random::<f64>() - 0.5) * scale;
        }
    }

    #[test]
    fn zero_weights_zero_state_give_zero_output() {
        let sp = spec(3, 4, 1);
        let store = store_for(&sp);
        let state = LstmState::<f64>::zeros(&sp, 2);
        let x = Array2::from_elem((2, 3), 0.7f64);
        let next = lstm_step(&sp, &store, "", x.view(), &state).unwrap();
        assert!(next.h[0].iter().all(|&v| v == 0.0));
        assert!(next.c[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_entries_stay_bounded() {
        let sp = spec(5, 6, 2);
        let mut store = store_for(&sp);
        randomize(&mut store, 61, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut state = LstmState::<f64>::zeros(&sp, 3);
        for _ in 0..7 {
            let x = Array2::from_shape_fn((3, 5), |_| (rng.random::<f64>() - 0.5) * 100.0);
            state = lstm_step(&sp, &store, "", x.view(), &state).unwrap();
            for l in 0..2 {
                assert!(state.h[l].iter().all(|&v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn single_unit_cell_matches_hand_evaluation() {
        let sp = spec(1, 1, 1);
        let mut store = store_for(&sp);
        // wx rows [i, f, g, o]; wh likewise; b likewise.
        let (wxi, wxf, wxg, wxo) = (0.5f64, 0.3, -0.2, 0.7);
        let (whi, whf, whg, who) = (-0.4f64, 0.6, 0.1, -0.8);
        let (bi, bf, bg, bo) = (0.05f64, 1.0, -0.3, 0.2);
        {
            let mut wx = store.view2_mut("lstm0.wx");
            wx[[0, 0]] = wxi;
            wx[[1, 0]] = wxf;
            wx[[2, 0]] = wxg;
            wx[[3, 0]] = wxo;
        }
        {
            let mut wh = store.view2_mut("lstm0.wh");
            wh[[0, 0]] = whi;
            wh[[1, 0]] = whf;
            wh[[2, 0]] = whg;
            wh[[3, 0]] = who;
        }
        {
            let mut b = store.view1_mut("lstm0.b");
            b[0] = bi;
            b[1] = bf;
            b[2] = bg;
            b[3] = bo;
        }
        let (x, h0, c0) = (0.8f64, 0.3, -0.4);
        let mut state = LstmState::<f64>::zeros(&sp, 1);
        state.h[0][[0, 0]] = h0;
        state.c[0][[0, 0]] = c0;
        let xs = Array2::from_elem((1, 1), x);
        let next = lstm_step(&sp, &store, "", xs.view(), &state).unwrap();

        // Hand evaluation of the four gate equations.
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(wxi * x + whi * h0 + bi);
        let f = sig(wxf * x + whf * h0 + bf);
        let g = (wxg * x + whg * h0 + bg).tanh();
        let o = sig(wxo * x + who * h0 + bo);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        assert!((next.c[0][[0, 0]] - c1).abs() < 1e-6, "c mismatch");
        assert!((next.h[0][[0, 0]] - h1).abs() < 1e-6, "h mismatch");
    }

    #[test]
    fn sequence_gradients_match_finite_differences() {
        // Two stacked layers to exercise the inter-layer path.
        let sp = spec(4, 3, 2);
        let mut store = store_for(&sp);
        randomize(&mut store, 71, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let t_len = 3usize;
        let batch = 2usize;
        let inputs: Vec<Array2<f64>> = (0..t_len)
            .map(|_| Array2::from_shape_fn((batch, 4), |_| rng.random::<f64>() - 0.5))
            .collect();
        let coefs: Vec<Array2<f64>> = (0..t_len)
            .map(|_| Array2::from_shape_fn((batch, 4), |_| rng.random::<f64>() - 0.5))
            .collect();

        let loss = |st: &FlatTensors<f64>, ins: &[Array2<f64>]| -> f64 {
            let outs = lstm_sequence_forward(&sp, st, "", ins, None);
            outs.iter()
                .zip(coefs.iter())
                .map(|(o, c)| o.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };

        let mut cache = None;
        let _ = lstm_sequence_forward(&sp, &store, "", &inputs, Some(&mut cache));
        let mut grads = FlatTensors::<f64>::zeros(Arc::clone(store.layout()));
        let d_ins = lstm_sequence_backward(
            &sp,
            &store,
            "",
            &inputs,
            cache.as_ref().unwrap(),
            &coefs,
            &mut grads,
        );

        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..60 {
            let i = rng.random_range(0..store.values().len());
            let mut p = store.clone();
            p.values_mut()[i] += h;
            let mut m = store.clone();
            m.values_mut()[i] -= h;
            let fd = (loss(&p, &inputs) - loss(&m, &inputs)) / (2.0 * h);
            let an = grads.values()[i];
            assert!(
                (fd - an).abs() < 1e-7 * (1.0 + fd.abs().max(an.abs())),
                "param {i}: fd {fd} vs analytic {an}"
            );
        }
        // Input gradients, including causality: the step-0 input gradient
        // reflects all later outputs; perturbing a late input must not move
        // early outputs (checked through the finite difference itself).
        for (t, d_in) in d_ins.iter().enumerate() {
            let mut p = inputs.clone();
            p[t][[0, 1]] += h;
            let mut m = inputs.clone();
            m[t][[0, 1]] -= h;
            let fd = (loss(&store, &p) - loss(&store, &m)) / (2.0 * h);
            let an = d_in[[0, 1]];
            assert!(
                (fd - an).abs() < 1e-7 * (1.0 + fd.abs().max(an.abs())),
                "input {t}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn outputs_are_causal() {
        let sp = spec(3, 4, 1);
        let mut store = store_for(&sp);
        randomize(&mut store, 81, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let inputs: Vec<Array2<f64>> = (0..5)
            .map(|_| Array2::from_shape_fn((1, 3), |_| rng.random::<f64>()))
            .collect();
        let base = lstm_sequence_forward(&sp, &store, "", &inputs, None);

        let mut changed = inputs.clone();
        changed[3][[0, 0]] += 5.0;
        let out = lstm_sequence_forward(&sp, &store, "", &changed, None);
        for t in 0..3 {
            assert_eq!(base[t], out[t], "output {t} must ignore later inputs");
        }
        assert_ne!(base[3], out[3]);
    }
}
