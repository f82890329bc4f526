//! Central finite-difference verification of [`accumulate_gradients`].
//!
//! The numeric side only uses [`forward_sequence`], so it stays independent
//! of the backward kernels it checks.
//!
//! [`accumulate_gradients`]: crate::nn::network::accumulate_gradients
//! [`forward_sequence`]: crate::nn::network::forward_sequence

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::network::{backward_sequence, forward_sequence};
use crate::nn::params::ParamSet;
use crate::nn::spec::{Activation, Layer, NetworkSpec, RecurrentState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter entry where the maximum occurred, as `name[index]`.
    pub worst_entry: String,
    /// Analytic and numeric gradient at `worst_entry`.
    pub worst_pair: (f64, f64),
    pub entries_checked: usize,
}

fn objective(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &[Tensor],
    state: Option<&RecurrentState>,
    probes: &[Tensor],
) -> Result<f64> {
    let (outputs, _) = forward_sequence(spec, params, inputs, state)?;
    Ok(outputs.iter().zip(probes).map(|(q, r)| q.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()).sum())
}

/// Compares the analytic gradient of `sum_t probes[t] . q_t` with central
/// differences of step `eps` on every parameter entry.
pub fn finite_diff_check(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &[Tensor],
    state: Option<&RecurrentState>,
    probes: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = backward_sequence(spec, params, inputs, state, probes)?;
    let mut perturbed = params.clone();
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst_entry: String::new(), worst_pair: (0.0, 0.0), entries_checked: 0 };
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let len = params.require(name)?.len();
        for idx in 0..len {
            let original = params.require(name)?.data()[idx];
            perturbed.get_mut(name).expect("cloned").data_mut()[idx] = original + eps;
            let plus = objective(spec, &perturbed, inputs, state, probes)?;
            perturbed.get_mut(name).expect("cloned").data_mut()[idx] = original - eps;
            let minus = objective(spec, &perturbed, inputs, state, probes)?;
            perturbed.get_mut(name).expect("cloned").data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic.require(name)?.data()[idx];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || report.worst_entry.is_empty() {
                report.max_rel_error = rel;
                report.worst_entry = format!("{name}[{idx}]");
                report.worst_pair = (exact, numeric);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

/// A network, seeded parameters and inputs for a gradient check. Inputs are
/// drawn from `[0, 1)`, the range of preprocessed observations.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub inputs: Vec<Tensor>,
    pub probes: Vec<Tensor>,
}

impl GradCheckCase {
    pub fn build(name: &'static str, spec: NetworkSpec, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec.init_params(&mut rng);
        let inputs = (0..steps)
            .map(|_| {
                let data = (0..spec.input_len()).map(|_| rng.random_range(0.0..1.0)).collect();
                Tensor::new(spec.input_shape().to_vec(), data).expect("input shape")
            })
            .collect();
        let probes = (0..steps)
            .map(|_| Tensor::vector((0..spec.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        Self { name, spec, params, inputs, probes }
    }

    pub fn run(&self, eps: f64) -> Result<GradCheckReport> {
        finite_diff_check(&self.spec, &self.params, &self.inputs, self.spec.zero_state().as_ref(), &self.probes, eps)
    }
}

fn dense(input: usize, output: usize, activation: Activation) -> Layer {
    Layer::Dense { input, output, activation }
}

fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Layer {
    Layer::Conv2d { in_channels, out_channels, kernel, stride, activation: Activation::Relu }
}

/// Every checked architecture: small dense, conv and lstm networks plus the
/// `grid` presets and the feedforward `catch` preset. Recurrent cases are
/// unrolled over four steps.
pub fn standard_cases(seed: u64) -> Vec<GradCheckCase> {
    use Activation::{Linear, Relu, Tanh};
    let spec = |shape: Vec<usize>, layers: Vec<Layer>| NetworkSpec::new(shape, layers).expect("valid case");
    vec![
        GradCheckCase::build("linear", spec(vec![4], vec![dense(4, 3, Linear)]), 1, seed),
        GradCheckCase::build(
            "dense",
            spec(vec![6], vec![dense(6, 8, Tanh), dense(8, 5, Relu), dense(5, 3, Linear)]),
            1,
            seed,
        ),
        GradCheckCase::build(
            "conv",
            spec(vec![9, 9], vec![conv(1, 3, 3, 2), conv(3, 4, 2, 1), dense(36, 5, Relu), dense(5, 3, Linear)]),
            1,
            seed,
        ),
        GradCheckCase::build(
            "lstm-unrolled-4",
            spec(vec![5], vec![dense(5, 6, Tanh), Layer::Lstm { input: 6, hidden: 4 }, dense(4, 3, Linear)]),
            4,
            seed,
        ),
        GradCheckCase::build(
            "conv-lstm-unrolled-4",
            spec(
                vec![8, 8],
                vec![conv(1, 2, 3, 2), dense(18, 6, Relu), Layer::Lstm { input: 6, hidden: 5 }, dense(5, 2, Linear)],
            ),
            4,
            seed,
        ),
        GradCheckCase::build("preset-grid", NetworkSpec::preset("grid", &[5, 5], 4, false).expect("preset"), 1, seed),
        GradCheckCase::build(
            "preset-grid-lstm-unrolled-4",
            NetworkSpec::preset("grid", &[5, 5], 4, true).expect("preset"),
            4,
            seed,
        ),
        GradCheckCase::build(
            "preset-catch",
            NetworkSpec::preset("catch", &[20, 20], 3, false).expect("preset"),
            1,
            seed,
        ),
    ]
}
