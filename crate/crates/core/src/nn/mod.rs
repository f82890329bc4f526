//! Minimal neural network core: layer descriptors, parameters, forward and
//! reverse-mode gradients, losses and optimizers, all in `f64`.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod spec;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{conv2d, lstm_step};
pub use loss::{td_loss, LossKind};
pub use network::{accumulate_gradients, backward, backward_sequence, forward, forward_sequence, unroll, Unroll};
pub use optim::{Adam, Optimizer, OptimizerKind, RmsProp};
pub use params::ParamSet;
pub use spec::{Activation, Layer, NetworkSpec, RecurrentState};
