//! Forward and backward kernels for the supported layer types.
//!
//! Kernels work on flat row-major slices; shape checking happens in the
//! callers. Backward kernels accumulate into gradient buffers.

use crate::error::{Error, Result};
use crate::nn::spec::{Activation, RecurrentState};
use crate::tensor::Tensor;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `out = act(W x + b)` with `W` of shape `[out, in]`.
pub(crate) fn dense_forward(weight: &[f64], bias: &[f64], x: &[f64], act: Activation) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            act.apply(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        })
        .collect()
}

/// Returns the gradient with respect to `x`.
pub(crate) fn dense_backward(
    weight: &[f64],
    x: &[f64],
    out: &[f64],
    act: Activation,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, (&y, &g)) in out.iter().zip(dout).enumerate() {
        let dz = g * act.grad_from_output(y);
        if dz == 0.0 {
            continue;
        }
        dbias[o] += dz;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let drow = &mut dweight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += dz * x[i];
            dx[i] += dz * row[i];
        }
    }
    dx
}

/// Geometry of a valid-padding cross-correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel_w) / self.stride + 1
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeometry,
    weight: &[f64],
    bias: Option<&[f64]>,
    x: &[f64],
    act: Activation,
) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut out = vec![0.0; g.out_channels * oh * ow];
    for o in 0..g.out_channels {
        let b = bias.map_or(0.0, |b| b[o]);
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = b;
                for c in 0..g.in_channels {
                    for ky in 0..g.kernel_h {
                        let in_row = (c * g.height + y * g.stride + ky) * g.width + xo * g.stride;
                        let w_row = ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w;
                        for kx in 0..g.kernel_w {
                            acc += weight[w_row + kx] * x[in_row + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = act.apply(acc);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    weight: &[f64],
    x: &[f64],
    out: &[f64],
    act: Activation,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut dx = vec![0.0; x.len()];
    for o in 0..g.out_channels {
        for y in 0..oh {
            for xo in 0..ow {
                let idx = (o * oh + y) * ow + xo;
                let dz = dout[idx] * act.grad_from_output(out[idx]);
                if dz == 0.0 {
                    continue;
                }
                dbias[o] += dz;
                for c in 0..g.in_channels {
                    for ky in 0..g.kernel_h {
                        let in_row = (c * g.height + y * g.stride + ky) * g.width + xo * g.stride;
                        let w_row = ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w;
                        for kx in 0..g.kernel_w {
                            dweight[w_row + kx] += dz * x[in_row + kx];
                            dx[in_row + kx] += dz * weight[w_row + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Valid-padding 2-D cross-correlation without bias.
///
/// `input` is `[h, w]` (one channel) or `[c, h, w]`; `kernels` is `[kh, kw]`
/// (one input and one output channel) or `[out, c, kh, kw]`. A 2-D input with
/// a 2-D kernel yields a 2-D output; otherwise the output is `[out, oh, ow]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let (channels, height, width) = match *input.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::Shape(format!("conv2d input must be 2-D or 3-D, got {s:?}"))),
    };
    let (out_channels, kernel_channels, kernel_h, kernel_w) = match *kernels.shape() {
        [kh, kw] => (1, 1, kh, kw),
        [o, c, kh, kw] => (o, c, kh, kw),
        ref s => return Err(Error::Shape(format!("conv2d kernels must be 2-D or 4-D, got {s:?}"))),
    };
    if kernel_channels != channels {
        return Err(Error::Shape(format!("kernel expects {kernel_channels} channels, input has {channels}")));
    }
    if kernel_h > height || kernel_w > width {
        return Err(Error::Shape(format!("kernel {kernel_h}x{kernel_w} larger than input {height}x{width}")));
    }
    let g = ConvGeometry { in_channels: channels, height, width, out_channels, kernel_h, kernel_w, stride };
    let data = conv_forward(&g, kernels.data(), None, input.data(), Activation::Linear);
    let shape = if input.shape().len() == 2 && kernels.shape().len() == 2 {
        vec![g.out_height(), g.out_width()]
    } else {
        vec![out_channels, g.out_height(), g.out_width()]
    };
    Tensor::new(shape, data)
}

/// Intermediate values of one LSTM step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates laid out as `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM step over raw slices. Gate rows are ordered input, forget,
/// candidate, output.
pub(crate) fn lstm_forward(
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
    let hidden = h_prev.len();
    let n_in = x.len();
    let mut gates = vec![0.0; 4 * hidden];
    for (r, gate) in gates.iter_mut().enumerate() {
        let wi = &w_ih[r * n_in..(r + 1) * n_in];
        let wh = &w_hh[r * hidden..(r + 1) * hidden];
        let z = bias[r]
            + wi.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            + wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
        *gate = if (2 * hidden..3 * hidden).contains(&r) { z.tanh() } else { sigmoid(z) };
    }
    let mut cell = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
        cell[k] = f * c_prev[k] + i * g;
        tanh_c[k] = cell[k].tanh();
        h[k] = o * tanh_c[k];
    }
    let cache = LstmStepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, tanh_c };
    (h, cell, cache)
}

/// Gradients flowing out of one LSTM step.
pub(crate) struct LstmStepGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &LstmStepCache,
    dh: &[f64],
    dc_next: &[f64],
    dw_ih: &mut [f64],
    dw_hh: &mut [f64],
    dbias: &mut [f64],
) -> LstmStepGrads {
    let hidden = dh.len();
    let n_in = cache.x.len();
    let gates = &cache.gates;
    let mut dpre = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (gates[k], gates[hidden + k], gates[2 * hidden + k], gates[3 * hidden + k]);
        let tc = cache.tanh_c[k];
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dpre[k] = dc * g * i * (1.0 - i);
        dpre[hidden + k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dpre[2 * hidden + k] = dc * i * (1.0 - g * g);
        dpre[3 * hidden + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    let mut dx = vec![0.0; n_in];
    let mut dh_prev = vec![0.0; hidden];
    for (r, &d) in dpre.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        dbias[r] += d;
        let wi = &w_ih[r * n_in..(r + 1) * n_in];
        let dwi = &mut dw_ih[r * n_in..(r + 1) * n_in];
        for j in 0..n_in {
            dwi[j] += d * cache.x[j];
            dx[j] += d * wi[j];
        }
        let wh = &w_hh[r * hidden..(r + 1) * hidden];
        let dwh = &mut dw_hh[r * hidden..(r + 1) * hidden];
        for j in 0..hidden {
            dwh[j] += d * cache.h_prev[j];
            dh_prev[j] += d * wh[j];
        }
    }
    LstmStepGrads { dx, dh_prev, dc_prev }
}

/// Standard LSTM cell step (forget gate, no peepholes):
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
///
/// `w_ih` is `[4h, in]`, `w_hh` is `[4h, h]` and `bias` is `[4h]`, gate
/// blocks ordered input, forget, candidate, output.
pub fn lstm_step(
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    input: &Tensor,
    state: &RecurrentState,
) -> Result<RecurrentState> {
    let hidden = state.hidden.len();
    if state.cell.len() != hidden {
        return Err(Error::Shape(format!("hidden state has {hidden} units, cell has {}", state.cell.len())));
    }
    let n_in = input.len();
    if w_ih.shape() != [4 * hidden, n_in] || w_hh.shape() != [4 * hidden, hidden] || bias.shape() != [4 * hidden] {
        return Err(Error::Shape(format!(
            "lstm weights {:?}/{:?}/{:?} do not match input {n_in} and hidden {hidden}",
            w_ih.shape(),
            w_hh.shape(),
            bias.shape()
        )));
    }
    let (h, c, _) =
        lstm_forward(w_ih.data(), w_hh.data(), bias.data(), input.data(), state.hidden.data(), state.cell.data());
    Ok(RecurrentState { hidden: Tensor::vector(h), cell: Tensor::vector(c) })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn zero_lstm(n_in: usize, hidden: usize) -> (Tensor, Tensor, Tensor) {
        (Tensor::zeros(&[4 * hidden, n_in]), Tensor::zeros(&[4 * hidden, hidden]), Tensor::zeros(&[4 * hidden]))
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let input = Tensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap();
        let out = conv2d(&input, &Tensor::filled(&[1, 1], 1.0), 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_ones_on_ones() {
        let out = conv2d(&Tensor::filled(&[3, 3], 1.0), &Tensor::filled(&[2, 2], 1.0), 1).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let input = Tensor::new(vec![4, 4], (0..16).map(f64::from).collect()).unwrap();
        let out = conv2d(&input, &Tensor::zeros(&[3, 3]), 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let err = conv2d(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[3, 3]), 1);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn conv_multichannel_strided() {
        // 2 channels of 4x4, kernel 2x2 stride 2, channel 1 weighted by 10.
        let input = Tensor::new(vec![2, 4, 4], (0..32).map(f64::from).collect()).unwrap();
        let mut k = vec![1.0; 4];
        k.extend([10.0; 4]);
        let out = conv2d(&input, &Tensor::new(vec![1, 2, 2, 2], k).unwrap(), 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        // top-left window: ch0 {0,1,4,5}=10, ch1 {16,17,20,21}=74
        assert_eq!(out.data()[0], 10.0 + 740.0);
    }

    #[test]
    fn lstm_zero_everything() {
        let (wi, wh, b) = zero_lstm(3, 2);
        let s = lstm_step(&wi, &wh, &b, &Tensor::zeros(&[3]), &RecurrentState::zeros(2)).unwrap();
        assert_eq!(s, RecurrentState::zeros(2));
    }

    #[test]
    fn lstm_zero_params_halves_cell() {
        let (wi, wh, b) = zero_lstm(2, 3);
        let c = vec![1.0, -2.0, 4.0];
        let state = RecurrentState { hidden: Tensor::vector(vec![0.3, 0.1, -0.7]), cell: Tensor::vector(c.clone()) };
        let next = lstm_step(&wi, &wh, &b, &Tensor::vector(vec![0.5, -0.5]), &state).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(next.cell.data()[k], 0.5 * c[k], epsilon = 1e-15);
            assert_abs_diff_eq!(next.hidden.data()[k], 0.5 * (0.5 * c[k]).tanh(), epsilon = 1e-15);
        }
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let (wi, wh, mut b) = zero_lstm(2, 2);
        b.data_mut()[2..4].fill(50.0);
        let state = RecurrentState { hidden: Tensor::zeros(&[2]), cell: Tensor::vector(vec![0.8, -1.3]) };
        let next = lstm_step(&wi, &wh, &b, &Tensor::vector(vec![1.0, 1.0]), &state).unwrap();
        assert_abs_diff_eq!(next.cell.data()[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(next.cell.data()[1], -1.3, epsilon = 1e-12);
    }

    #[test]
    fn lstm_rejects_bad_shapes() {
        let (wi, wh, b) = zero_lstm(2, 2);
        assert!(lstm_step(&wi, &wh, &b, &Tensor::zeros(&[3]), &RecurrentState::zeros(2)).is_err());
        assert!(lstm_step(&wi, &wh, &b, &Tensor::zeros(&[2]), &RecurrentState::zeros(3)).is_err());
    }
}
