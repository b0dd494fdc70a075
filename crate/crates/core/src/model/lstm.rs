//! Two-layer LSTM encoder with a linear readout of the top layer's last
//! hidden state, and its backward pass through time.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};

use super::params::{Encoder, LstmLayer};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step activations of one layer, kept for the backward pass.
pub(crate) struct LayerTape {
    /// Activated gates `[i f g o]`, `B × 4H` per step.
    gates: Vec<Array2<f64>>,
    cells: Vec<Array2<f64>>,
    hiddens: Vec<Array2<f64>>,
}

pub(crate) struct EncoderTape {
    /// Layer-0 input per step, `B × S`.
    inputs: Vec<Array2<f64>>,
    layers: Vec<LayerTape>,
}

/// Time-major inputs from a batch of `S × T` windows.
pub(crate) fn time_major(windows: &[ArrayView2<f64>]) -> Vec<Array2<f64>> {
    let b = windows.len();
    let (s, t) = windows[0].dim();
    (0..t)
        .map(|step| Array2::from_shape_fn((b, s), |(i, c)| windows[i][[c, step]]))
        .collect()
}

fn layer_forward(layer: &LstmLayer, inputs: &[Array2<f64>]) -> LayerTape {
    let b = inputs[0].nrows();
    let h = layer.w_hh.ncols();
    let mut gates = Vec::with_capacity(inputs.len());
    let mut cells = Vec::with_capacity(inputs.len());
    let mut hiddens = Vec::with_capacity(inputs.len());
    let mut h_prev = Array2::<f64>::zeros((b, h));
    let mut c_prev = Array2::<f64>::zeros((b, h));
    for x in inputs {
        let mut z = Array2::from_shape_fn((b, 4 * h), |(_, j)| layer.bias[j]);
        general_mat_mul(1.0, x, &layer.w_ih.t(), 1.0, &mut z);
        general_mat_mul(1.0, &h_prev, &layer.w_hh.t(), 1.0, &mut z);
        let mut c = Array2::zeros((b, h));
        let mut hn = Array2::zeros((b, h));
        for r in 0..b {
            let mut zr = z.row_mut(r);
            for j in 0..h {
                let i_g = sigmoid(zr[j]);
                let f_g = sigmoid(zr[h + j]);
                let g_g = zr[2 * h + j].tanh();
                let o_g = sigmoid(zr[3 * h + j]);
                zr[j] = i_g;
                zr[h + j] = f_g;
                zr[2 * h + j] = g_g;
                zr[3 * h + j] = o_g;
                let cv = f_g * c_prev[[r, j]] + i_g * g_g;
                c[[r, j]] = cv;
                hn[[r, j]] = o_g * cv.tanh();
            }
        }
        gates.push(z);
        h_prev = hn.clone();
        c_prev = c.clone();
        cells.push(c);
        hiddens.push(hn);
    }
    LayerTape { gates, cells, hiddens }
}

/// Runs the encoder on a chunk; returns `B × d_t` codes and the tape.
pub(crate) fn encoder_forward(enc: &Encoder, windows: &[ArrayView2<f64>]) -> (Array2<f64>, EncoderTape) {
    let inputs = time_major(windows);
    let mut layers = Vec::with_capacity(enc.layers.len());
    for (l, layer) in enc.layers.iter().enumerate() {
        let tape = if l == 0 {
            layer_forward(layer, &inputs)
        } else {
            let below: &LayerTape = &layers[l - 1];
            layer_forward(layer, &below.hiddens)
        };
        layers.push(tape);
    }
    let last = layers.last().unwrap().hiddens.last().unwrap();
    let mut out = Array2::from_shape_fn((last.nrows(), enc.proj_b.len()), |(_, j)| enc.proj_b[j]);
    general_mat_mul(1.0, last, &enc.proj_w.t(), 1.0, &mut out);
    (out, EncoderTape { inputs, layers })
}

/// Backpropagates per-step hidden-state gradients through one layer. Adds weight
/// gradients into `grad` and returns gradients w.r.t. the layer inputs.
fn layer_backward(
    layer: &LstmLayer,
    tape: &LayerTape,
    inputs: &[Array2<f64>],
    mut d_h_ext: Vec<Array2<f64>>,
    grad: &mut LstmLayer,
    want_input_grads: bool,
) -> Vec<Array2<f64>> {
    let steps = inputs.len();
    let b = inputs[0].nrows();
    let h = layer.w_hh.ncols();
    let mut d_h_next = Array2::<f64>::zeros((b, h));
    let mut d_c_next = Array2::<f64>::zeros((b, h));
    let mut d_inputs = vec![Array2::<f64>::zeros((0, 0)); if want_input_grads { steps } else { 0 }];
    let zeros = Array2::<f64>::zeros((b, h));
    let mut d_z = Array2::<f64>::zeros((b, 4 * h));
    for t in (0..steps).rev() {
        let gates = &tape.gates[t];
        let c = &tape.cells[t];
        let c_prev = if t > 0 { &tape.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &tape.hiddens[t - 1] } else { &zeros };
        let d_h = &mut d_h_ext[t];
        *d_h += &d_h_next;
        for r in 0..b {
            for j in 0..h {
                let i_g = gates[[r, j]];
                let f_g = gates[[r, h + j]];
                let g_g = gates[[r, 2 * h + j]];
                let o_g = gates[[r, 3 * h + j]];
                let tc = c[[r, j]].tanh();
                let dh = d_h[[r, j]];
                let dc = d_c_next[[r, j]] + dh * o_g * (1.0 - tc * tc);
                d_z[[r, j]] = dc * g_g * i_g * (1.0 - i_g);
                d_z[[r, h + j]] = dc * c_prev[[r, j]] * f_g * (1.0 - f_g);
                d_z[[r, 2 * h + j]] = dc * i_g * (1.0 - g_g * g_g);
                d_z[[r, 3 * h + j]] = dh * tc * o_g * (1.0 - o_g);
                d_c_next[[r, j]] = dc * f_g;
            }
        }
        general_mat_mul(1.0, &d_z.t(), &inputs[t], 1.0, &mut grad.w_ih);
        general_mat_mul(1.0, &d_z.t(), h_prev, 1.0, &mut grad.w_hh);
        grad.bias += &d_z.sum_axis(Axis(0));
        d_h_next = d_z.dot(&layer.w_hh);
        if want_input_grads {
            d_inputs[t] = d_z.dot(&layer.w_ih);
        }
    }
    d_inputs
}

/// Accumulates encoder parameter gradients for upstream `d_out` (`B × d_t`).
pub(crate) fn encoder_backward(enc: &Encoder, tape: &EncoderTape, d_out: ArrayView2<f64>, grad: &mut Encoder) {
    let top = tape.layers.last().unwrap();
    let steps = top.hiddens.len();
    let last = &top.hiddens[steps - 1];
    general_mat_mul(1.0, &d_out.t(), last, 1.0, &mut grad.proj_w);
    grad.proj_b += &d_out.sum_axis(Axis(0));
    let (b, h) = last.dim();
    let mut d_h: Vec<Array2<f64>> = (0..steps).map(|_| Array2::zeros((b, h))).collect();
    d_h[steps - 1] = d_out.dot(&enc.proj_w);
    for l in (0..enc.layers.len()).rev() {
        let inputs = if l == 0 { &tape.inputs } else { &tape.layers[l - 1].hiddens };
        d_h = layer_backward(&enc.layers[l], &tape.layers[l], inputs, d_h, &mut grad.layers[l], l > 0);
    }
}
