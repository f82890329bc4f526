use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidNetwork(format!("unknown activation `{other}`"))),
        }
    }
}

/// One layer descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense { input: usize, output: usize, activation: Activation },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, activation: Activation },
    Lstm { input: usize, hidden: usize },
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Dense { input, output, activation } => {
                write!(f, "dense {input} {output} {}", activation.name())
            }
            Layer::Conv2d { in_channels, out_channels, kernel, stride, activation } => {
                write!(f, "conv2d {in_channels} {out_channels} {kernel} {stride} {}", activation.name())
            }
            Layer::Lstm { input, hidden } => write!(f, "lstm {input} {hidden}"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::InvalidNetwork(format!("bad layer descriptor `{s}`")))
        };
        let act = |i: usize| -> Result<Activation> {
            parts.get(i).ok_or_else(|| Error::InvalidNetwork(format!("bad layer descriptor `{s}`")))?.parse()
        };
        match parts.first().copied() {
            Some("dense") if parts.len() == 4 => {
                Ok(Layer::Dense { input: num(1)?, output: num(2)?, activation: act(3)? })
            }
            Some("conv2d") if parts.len() == 6 => Ok(Layer::Conv2d {
                in_channels: num(1)?,
                out_channels: num(2)?,
                kernel: num(3)?,
                stride: num(4)?,
                activation: act(5)?,
            }),
            Some("lstm") if parts.len() == 3 => Ok(Layer::Lstm { input: num(1)?, hidden: num(2)? }),
            _ => Err(Error::InvalidNetwork(format!("bad layer descriptor `{s}`"))),
        }
    }
}

/// Stateful carry of the LSTM layer between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self { hidden: Tensor::zeros(&[hidden]), cell: Tensor::zeros(&[hidden]) }
    }
}

/// Layer stack with its input shape.
///
/// A 2-D input shape `[h, w]` is a single-channel image for convolutions;
/// dense and lstm layers see their input flattened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Parameter tensor names for layer `index`.
pub fn weight_name(index: usize) -> String {
    format!("l{index:02}.weight")
}

pub fn bias_name(index: usize) -> String {
    format!("l{index:02}.bias")
}

pub fn lstm_input_weight_name(index: usize) -> String {
    format!("l{index:02}.w_ih")
}

pub fn lstm_hidden_weight_name(index: usize) -> String {
    format!("l{index:02}.w_hh")
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let spec = Self { input_shape, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Width of the final layer, i.e. the number of actions.
    pub fn output_len(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { output, .. }) => *output,
            _ => unreachable!("validated spec ends in a dense layer"),
        }
    }

    pub fn lstm_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, Layer::Lstm { .. }))
    }

    pub fn lstm_hidden(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Lstm { hidden, .. } => Some(*hidden),
            _ => None,
        })
    }

    pub fn is_recurrent(&self) -> bool {
        self.lstm_index().is_some()
    }

    pub fn zero_state(&self) -> Option<RecurrentState> {
        self.lstm_hidden().map(RecurrentState::zeros)
    }

    /// Shape entering each layer, followed by the output shape.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        let mut current = self.input_shape.clone();
        for layer in &self.layers {
            current = match *layer {
                Layer::Dense { output, .. } => vec![output],
                Layer::Lstm { hidden, .. } => vec![hidden],
                Layer::Conv2d { out_channels, kernel, stride, .. } => {
                    let (h, w) = spatial(&current);
                    vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
            };
            shapes.push(current.clone());
        }
        shapes
    }

    fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {:?} must be non-empty and positive",
                self.input_shape
            )));
        }
        if !matches!(self.layers.last(), Some(Layer::Dense { .. })) {
            return Err(Error::InvalidNetwork("the last layer must be a dense head".into()));
        }
        if self.layers.iter().filter(|l| matches!(l, Layer::Lstm { .. })).count() > 1 {
            return Err(Error::InvalidNetwork("at most one lstm layer is supported".into()));
        }
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let flat: usize = current.iter().product();
            current = match *layer {
                Layer::Dense { input, output, .. } => {
                    if input != flat || output == 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} ({layer}) expects {input} inputs but receives {flat}"
                        )));
                    }
                    vec![output]
                }
                Layer::Lstm { input, hidden } => {
                    if input != flat || hidden == 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} ({layer}) expects {input} inputs but receives {flat}"
                        )));
                    }
                    vec![hidden]
                }
                Layer::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                    if current.len() != 2 && current.len() != 3 {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} ({layer}) needs an image input, got shape {current:?}"
                        )));
                    }
                    let channels = if current.len() == 2 { 1 } else { current[0] };
                    let (h, w) = spatial(&current);
                    if channels != in_channels {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} ({layer}) expects {in_channels} channels but receives {channels}"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::InvalidNetwork(format!("layer {i} ({layer}) has a zero size")));
                    }
                    if kernel > h || kernel > w {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i} ({layer}): kernel {kernel} larger than input {h}x{w}"
                        )));
                    }
                    vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
            };
        }
        Ok(())
    }

    /// Parameter names and shapes, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output, .. } => {
                    out.push((weight_name(i), vec![output, input]));
                    out.push((bias_name(i), vec![output]));
                }
                Layer::Conv2d { in_channels, out_channels, kernel, .. } => {
                    out.push((weight_name(i), vec![out_channels, in_channels, kernel, kernel]));
                    out.push((bias_name(i), vec![out_channels]));
                }
                Layer::Lstm { input, hidden } => {
                    out.push((lstm_input_weight_name(i), vec![4 * hidden, input]));
                    out.push((lstm_hidden_weight_name(i), vec![4 * hidden, hidden]));
                    out.push((bias_name(i), vec![4 * hidden]));
                }
            }
        }
        out
    }

    /// Checks that `params` carries exactly the tensors this spec needs.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::ParamMismatch(format!(
                "network needs {} tensors, parameter set has {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in shapes {
            let t = params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ParamMismatch(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(())
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut params = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_in = match *layer {
                Layer::Dense { input, .. } => input,
                Layer::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
                Layer::Lstm { input, hidden } => input + hidden,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for (name, shape) in self.param_shapes() {
                if !name.starts_with(&format!("l{i:02}.")) {
                    continue;
                }
                let len = shape.iter().product();
                let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
                params.insert(name, Tensor::new(shape, data).expect("shape from spec"));
            }
        }
        params
    }

    /// Zero-valued parameters in this spec's layout.
    pub fn zero_params(&self) -> ParamSet {
        self.param_shapes().into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).collect()
    }

    /// Text form: one line per layer preceded by `input d0 d1 ...`.
    pub fn to_text(&self) -> String {
        let dims: Vec<String> = self.input_shape.iter().map(usize::to_string).collect();
        let mut s = format!("input {}\n", dims.join(" "));
        for layer in &self.layers {
            s.push_str(&layer.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::InvalidNetwork("empty network description".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("input") {
            return Err(Error::InvalidNetwork(format!("expected `input ...`, got `{header}`")));
        }
        let input_shape = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidNetwork(format!("bad input shape `{header}`")))?;
        let layers = lines.map(str::parse).collect::<Result<Vec<Layer>>>()?;
        Self::new(input_shape, layers)
    }

    /// Named architecture presets.
    ///
    /// * `grid`: dense 64 (relu), dense 32 (relu), optional lstm 32, linear head.
    /// * `catch`: conv 4x4/2, 3x3/2, 3x3/1 (8, 16, 16 channels), dense 128 and
    ///   64 (relu), optional lstm 64, linear head. Fits 20x20 frames.
    /// * `small-atari`: conv 8x8/4, 4x4/2, 3x3/1 (32, 64, 64 channels), dense
    ///   512 and 128 (relu), optional lstm 128, linear head. Needs frames of at
    ///   least 36x36.
    pub fn preset(name: &str, input_shape: &[usize], actions: usize, recurrent: bool) -> Result<Self> {
        let flat: usize = input_shape.iter().product();
        let (convs, dense): (&[(usize, usize, usize)], [usize; 2]) = match name {
            "grid" => (&[], [64, 32]),
            "catch" => (&[(8, 4, 2), (16, 3, 2), (16, 3, 1)], [128, 64]),
            "small-atari" => (&[(32, 8, 4), (64, 4, 2), (64, 3, 1)], [512, 128]),
            other => return Err(Error::InvalidNetwork(format!("unknown preset `{other}`"))),
        };
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        for &(out_channels, kernel, stride) in convs {
            if shape.len() != 2 && shape.len() != 3 {
                return Err(Error::InvalidNetwork(format!(
                    "preset `{name}` needs an image input, got {input_shape:?}"
                )));
            }
            let in_channels = if shape.len() == 2 { 1 } else { shape[0] };
            let (h, w) = spatial(&shape);
            if kernel > h || kernel > w {
                return Err(Error::InvalidNetwork(format!("preset `{name}` does not fit input {input_shape:?}")));
            }
            layers.push(Layer::Conv2d { in_channels, out_channels, kernel, stride, activation: Activation::Relu });
            shape = vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1];
        }
        let mut width = if convs.is_empty() { flat } else { shape.iter().product() };
        for units in dense {
            layers.push(Layer::Dense { input: width, output: units, activation: Activation::Relu });
            width = units;
        }
        if recurrent {
            layers.push(Layer::Lstm { input: width, hidden: width });
        }
        layers.push(Layer::Dense { input: width, output: actions, activation: Activation::Linear });
        Self::new(input_shape.to_vec(), layers)
    }
}

fn spatial(shape: &[usize]) -> (usize, usize) {
    match shape {
        [h, w] => (*h, *w),
        [_, h, w] => (*h, *w),
        _ => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn rejects_incompatible_dimensions() {
        let bad = NetworkSpec::new(
            vec![4],
            vec![
                Layer::Dense { input: 4, output: 3, activation: Activation::Relu },
                Layer::Dense { input: 2, output: 2, activation: Activation::Linear },
            ],
        );
        assert!(matches!(bad, Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn rejects_two_lstm_layers() {
        let bad = NetworkSpec::new(
            vec![2],
            vec![
                Layer::Lstm { input: 2, hidden: 2 },
                Layer::Lstm { input: 2, hidden: 2 },
                Layer::Dense { input: 2, output: 2, activation: Activation::Linear },
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_oversized_kernel() {
        let bad = NetworkSpec::new(
            vec![3, 3],
            vec![
                Layer::Conv2d { in_channels: 1, out_channels: 1, kernel: 4, stride: 1, activation: Activation::Relu },
                Layer::Dense { input: 1, output: 1, activation: Activation::Linear },
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn presets_build_for_their_inputs() {
        let grid = NetworkSpec::preset("grid", &[5, 5], 4, true).unwrap();
        assert_eq!(grid.output_len(), 4);
        assert_eq!(grid.lstm_hidden(), Some(32));
        let catch = NetworkSpec::preset("catch", &[20, 20], 3, false).unwrap();
        assert_eq!(catch.layer_shapes()[3], vec![16, 2, 2]);
        let atari = NetworkSpec::preset("small-atari", &[84, 84], 6, true).unwrap();
        assert_eq!(atari.layer_shapes()[3], vec![64, 7, 7]);
        assert!(NetworkSpec::preset("small-atari", &[20, 20], 3, false).is_err());
        assert!(NetworkSpec::preset("nope", &[20, 20], 3, false).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let spec = NetworkSpec::preset("catch", &[20, 20], 3, true).unwrap();
        assert_eq!(NetworkSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = NetworkSpec::preset("grid", &[5, 5], 4, false).unwrap();
        let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        spec.check_params(&params).unwrap();
        let bound = 1.0 / 25f64.sqrt();
        assert!(params.get("l00.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        let again = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        assert!(params.bit_eq(&again));
    }
}
