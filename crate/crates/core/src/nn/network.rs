//! Forward evaluation and reverse-mode gradients over a [`NetworkSpec`].
//!
//! Recurrent networks are unrolled step by step; layers before and after the
//! lstm are applied independently at every step, and backpropagation through
//! time carries the hidden and cell gradients backwards across steps.

use crate::error::{Error, Result};
use crate::nn::layers::{self, ConvGeometry, LstmStepCache};
use crate::nn::params::ParamSet;
use crate::nn::spec::{
    bias_name, lstm_hidden_weight_name, lstm_input_weight_name, weight_name, Layer, NetworkSpec, RecurrentState,
};
use crate::tensor::Tensor;

enum LayerCache {
    Plain { input: Vec<f64>, output: Vec<f64> },
    Lstm(LstmStepCache),
}

struct StepTrace {
    caches: Vec<LayerCache>,
}

/// Outputs and cached activations of a traced forward pass over a sequence.
pub struct Unroll {
    pub outputs: Vec<Tensor>,
    pub final_state: Option<RecurrentState>,
    steps: Vec<StepTrace>,
}

impl Unroll {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

struct LayerView<'a> {
    layer: Layer,
    geometry: Option<ConvGeometry>,
    weight: &'a [f64],
    hidden_weight: &'a [f64],
    bias: &'a [f64],
}

fn resolve<'a>(spec: &NetworkSpec, params: &'a ParamSet) -> Result<Vec<LayerView<'a>>> {
    spec.check_params(params)?;
    let shapes = spec.layer_shapes();
    spec.layers()
        .iter()
        .enumerate()
        .map(|(i, &layer)| {
            let view = match layer {
                Layer::Lstm { .. } => LayerView {
                    layer,
                    geometry: None,
                    weight: params.require(&lstm_input_weight_name(i))?.data(),
                    hidden_weight: params.require(&lstm_hidden_weight_name(i))?.data(),
                    bias: params.require(&bias_name(i))?.data(),
                },
                Layer::Dense { .. } => LayerView {
                    layer,
                    geometry: None,
                    weight: params.require(&weight_name(i))?.data(),
                    hidden_weight: &[],
                    bias: params.require(&bias_name(i))?.data(),
                },
                Layer::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                    let (height, width) = match shapes[i].as_slice() {
                        [h, w] | [_, h, w] => (*h, *w),
                        _ => unreachable!("validated conv input"),
                    };
                    LayerView {
                        layer,
                        geometry: Some(ConvGeometry {
                            in_channels,
                            height,
                            width,
                            out_channels,
                            kernel_h: kernel,
                            kernel_w: kernel,
                            stride,
                        }),
                        weight: params.require(&weight_name(i))?.data(),
                        hidden_weight: &[],
                        bias: params.require(&bias_name(i))?.data(),
                    }
                }
            };
            Ok(view)
        })
        .collect()
}

fn check_state(spec: &NetworkSpec, state: Option<&RecurrentState>) -> Result<()> {
    match (spec.lstm_hidden(), state) {
        (None, None) => Ok(()),
        (None, Some(_)) => Err(Error::Shape("state given to a network without an lstm layer".into())),
        (Some(_), None) => Err(Error::Shape("recurrent network requires a state".into())),
        (Some(h), Some(s)) if s.hidden.len() == h && s.cell.len() == h => Ok(()),
        (Some(h), Some(s)) => Err(Error::Shape(format!(
            "state has hidden {} / cell {}, lstm layer has {h} units",
            s.hidden.len(),
            s.cell.len()
        ))),
    }
}

fn check_input(spec: &NetworkSpec, input: &Tensor) -> Result<()> {
    if input.len() != spec.input_len() {
        return Err(Error::Shape(format!(
            "input of shape {:?} does not match network input {:?}",
            input.shape(),
            spec.input_shape()
        )));
    }
    Ok(())
}

type Carry = (Vec<f64>, Vec<f64>);

fn step(
    views: &[LayerView<'_>],
    input: &Tensor,
    carry: Option<Carry>,
    trace: bool,
) -> (Vec<f64>, Option<Carry>, Option<StepTrace>) {
    let mut x = input.data().to_vec();
    let mut carry = carry;
    let mut caches = Vec::with_capacity(if trace { views.len() } else { 0 });
    for view in views {
        match view.layer {
            Layer::Dense { activation, .. } => {
                let out = layers::dense_forward(view.weight, view.bias, &x, activation);
                if trace {
                    caches.push(LayerCache::Plain { input: std::mem::take(&mut x), output: out.clone() });
                }
                x = out;
            }
            Layer::Conv2d { activation, .. } => {
                let g = view.geometry.as_ref().expect("conv geometry");
                let out = layers::conv_forward(g, view.weight, Some(view.bias), &x, activation);
                if trace {
                    caches.push(LayerCache::Plain { input: std::mem::take(&mut x), output: out.clone() });
                }
                x = out;
            }
            Layer::Lstm { .. } => {
                let (h_prev, c_prev) = carry.take().expect("state checked");
                let (h, c, cache) =
                    layers::lstm_forward(view.weight, view.hidden_weight, view.bias, &x, &h_prev, &c_prev);
                if trace {
                    caches.push(LayerCache::Lstm(cache));
                }
                carry = Some((h.clone(), c));
                x = h;
            }
        }
    }
    (x, carry, trace.then_some(StepTrace { caches }))
}

fn to_state(carry: Option<Carry>) -> Option<RecurrentState> {
    carry.map(|(h, c)| RecurrentState { hidden: Tensor::vector(h), cell: Tensor::vector(c) })
}

/// Evaluates the network once.
///
/// `state` must be given exactly when the network has an lstm layer; the
/// updated state is returned alongside the action values.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamSet,
    input: &Tensor,
    state: Option<&RecurrentState>,
) -> Result<(Tensor, Option<RecurrentState>)> {
    let views = resolve(spec, params)?;
    check_state(spec, state)?;
    check_input(spec, input)?;
    let carry = state.map(|s| (s.hidden.data().to_vec(), s.cell.data().to_vec()));
    let (q, carry, _) = step(&views, input, carry, false);
    Ok((Tensor::vector(q), to_state(carry)))
}

/// Runs the network over `inputs` in order without keeping activations.
pub fn forward_sequence(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &[Tensor],
    state: Option<&RecurrentState>,
) -> Result<(Vec<Tensor>, Option<RecurrentState>)> {
    let views = resolve(spec, params)?;
    check_state(spec, state)?;
    let mut carry = state.map(|s| (s.hidden.data().to_vec(), s.cell.data().to_vec()));
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in inputs {
        check_input(spec, input)?;
        let (q, next, _) = step(&views, input, carry, false);
        carry = next;
        outputs.push(Tensor::vector(q));
    }
    Ok((outputs, to_state(carry)))
}

/// Forward pass over a sequence that keeps every activation for
/// [`accumulate_gradients`]. A feedforward network treats each input
/// independently.
pub fn unroll(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &[Tensor],
    state: Option<&RecurrentState>,
) -> Result<Unroll> {
    let views = resolve(spec, params)?;
    check_state(spec, state)?;
    let mut carry = state.map(|s| (s.hidden.data().to_vec(), s.cell.data().to_vec()));
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    for input in inputs {
        check_input(spec, input)?;
        let (q, next, trace) = step(&views, input, carry, true);
        carry = next;
        outputs.push(Tensor::vector(q));
        steps.push(trace.expect("traced"));
    }
    Ok(Unroll { outputs, final_state: to_state(carry), steps })
}

/// Adds `scale * d(sum_t dqs[t] . q_t)/d(params)` into `grads`.
///
/// Gradients flow back through time across the lstm carry; the initial
/// state is treated as a constant.
pub fn accumulate_gradients(
    spec: &NetworkSpec,
    params: &ParamSet,
    unroll: &Unroll,
    dqs: &[Tensor],
    grads: &mut ParamSet,
    scale: f64,
) -> Result<()> {
    let views = resolve(spec, params)?;
    spec.check_params(grads)?;
    if dqs.len() != unroll.steps.len() {
        return Err(Error::Shape(format!("{} output gradients for {} unrolled steps", dqs.len(), unroll.steps.len())));
    }
    let actions = spec.output_len();
    if let Some(bad) = dqs.iter().find(|d| d.len() != actions) {
        return Err(Error::Shape(format!(
            "output gradient of shape {:?} for a network with {actions} outputs",
            bad.shape()
        )));
    }

    // Accumulate into local buffers; BTreeMap lookups per step would dominate.
    let mut buffers: Vec<[Vec<f64>; 3]> = views
        .iter()
        .map(|v| [vec![0.0; v.weight.len()], vec![0.0; v.hidden_weight.len()], vec![0.0; v.bias.len()]])
        .collect();

    let hidden = spec.lstm_hidden().unwrap_or(0);
    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];
    for (trace, dq) in unroll.steps.iter().zip(dqs).rev() {
        let mut g: Vec<f64> = dq.data().iter().map(|v| v * scale).collect();
        for ((view, cache), buf) in views.iter().zip(&trace.caches).zip(buffers.iter_mut()).rev() {
            let [dw, dwh, db] = buf;
            g = match (view.layer, cache) {
                (Layer::Dense { activation, .. }, LayerCache::Plain { input, output }) => {
                    layers::dense_backward(view.weight, input, output, activation, &g, dw, db)
                }
                (Layer::Conv2d { activation, .. }, LayerCache::Plain { input, output }) => {
                    let geom = view.geometry.as_ref().expect("conv geometry");
                    layers::conv_backward(geom, view.weight, input, output, activation, &g, dw, db)
                }
                (Layer::Lstm { .. }, LayerCache::Lstm(c)) => {
                    for (a, b) in g.iter_mut().zip(&dh_carry) {
                        *a += b;
                    }
                    let out = layers::lstm_backward(view.weight, view.hidden_weight, c, &g, &dc_carry, dw, dwh, db);
                    dh_carry = out.dh_prev;
                    dc_carry = out.dc_prev;
                    out.dx
                }
                _ => unreachable!("trace built from the same spec"),
            };
        }
    }

    for (i, (layer, [dw, dwh, db])) in spec.layers().iter().zip(buffers).enumerate() {
        let pairs = match layer {
            Layer::Lstm { .. } => {
                vec![(lstm_input_weight_name(i), dw), (lstm_hidden_weight_name(i), dwh), (bias_name(i), db)]
            }
            _ => vec![(weight_name(i), dw), (bias_name(i), db)],
        };
        for (name, buf) in pairs {
            let target = grads.get_mut(&name).expect("layout checked");
            for (a, b) in target.data_mut().iter_mut().zip(buf) {
                *a += b;
            }
        }
    }
    Ok(())
}

/// Gradient of `dq . q` with respect to every parameter for a single step.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamSet,
    input: &Tensor,
    state: Option<&RecurrentState>,
    dq: &Tensor,
) -> Result<ParamSet> {
    backward_sequence(spec, params, std::slice::from_ref(input), state, std::slice::from_ref(dq))
}

/// Gradient of `sum_t dqs[t] . q_t` over an unrolled sequence.
pub fn backward_sequence(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &[Tensor],
    state: Option<&RecurrentState>,
    dqs: &[Tensor],
) -> Result<ParamSet> {
    let trace = unroll(spec, params, inputs, state)?;
    let mut grads = spec.zero_params();
    accumulate_gradients(spec, params, &trace, dqs, &mut grads, 1.0)?;
    Ok(grads)
}
