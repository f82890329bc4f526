//! RMSProp and Adam updates over a [`ParamSet`].
//!
//! Both optimizers keep their moment caches in parameter sets of the same
//! layout as the parameters, created lazily on the first update.

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

pub const DEFAULT_RMSPROP_DECAY: f64 = 0.95;
pub const DEFAULT_RMSPROP_EPS: f64 = 1e-6;
pub const DEFAULT_ADAM_BETA1: f64 = 0.9;
pub const DEFAULT_ADAM_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// `c <- decay*c + (1-decay)*g^2; p <- p - lr*g/sqrt(c + eps)`
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    cache: Option<ParamSet>,
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        Self { lr, decay, eps, cache: None }
    }

    pub fn cache(&self) -> Option<&ParamSet> {
        self.cache.as_ref()
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_layout(grads)?;
        let cache = self.cache.get_or_insert_with(|| params.zeros_like());
        params.check_layout(cache)?;
        let (lr, decay, eps) = (self.lr, self.decay, self.eps);
        for (((_, p), (_, g)), (_, c)) in params.iter_mut().zip(grads.iter()).zip(cache.iter_mut()) {
            for ((p, &g), c) in p.data_mut().iter_mut().zip(g.data()).zip(c.data_mut()) {
                *c = decay * *c + (1.0 - decay) * g * g;
                *p -= lr * g / (*c + eps).sqrt();
            }
        }
        params.step_count += 1;
        Ok(())
    }
}

/// Bias-corrected Adam; the time step is `params.step_count + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Option<(ParamSet, ParamSet)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, moments: None }
    }

    pub fn moments(&self) -> Option<(&ParamSet, &ParamSet)> {
        self.moments.as_ref().map(|(m, v)| (m, v))
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_layout(grads)?;
        let (m, v) = self.moments.get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
        params.check_layout(m)?;
        params.check_layout(v)?;
        let t = (params.step_count + 1) as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .map(|(_, t)| t)
            .zip(grads.iter().map(|(_, t)| t))
            .zip(m.iter_mut().map(|(_, t)| t))
            .zip(v.iter_mut().map(|(_, t)| t))
        {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.step_count += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    RmsProp(RmsProp),
    Adam(Adam),
}

impl Optimizer {
    /// Optimizer of `kind` with default decay constants.
    pub fn with_defaults(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::RmsProp => Optimizer::RmsProp(RmsProp::new(lr, DEFAULT_RMSPROP_DECAY, DEFAULT_RMSPROP_EPS)),
            OptimizerKind::Adam => {
                Optimizer::Adam(Adam::new(lr, DEFAULT_ADAM_BETA1, DEFAULT_ADAM_BETA2, DEFAULT_ADAM_EPS))
            }
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::RmsProp(_) => OptimizerKind::RmsProp,
            Optimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        match self {
            Optimizer::RmsProp(o) => o.update(params, grads),
            Optimizer::Adam(o) => o.update(params, grads),
        }
    }

    /// Moment caches as named tensors (`cache/..`, or `m/..` and `v/..`).
    /// Empty before the first update.
    pub fn state(&self) -> ParamSet {
        let mut out = ParamSet::new();
        let mut add = |prefix: &str, set: &ParamSet| {
            for (name, t) in set.iter() {
                out.insert(format!("{prefix}/{name}"), t.clone());
            }
        };
        match self {
            Optimizer::RmsProp(o) => {
                if let Some(c) = &o.cache {
                    add("cache", c);
                }
            }
            Optimizer::Adam(o) => {
                if let Some((m, v)) = &o.moments {
                    add("m", m);
                    add("v", v);
                }
            }
        }
        out
    }

    /// Restores caches produced by [`Optimizer::state`].
    pub fn restore_state(&mut self, state: &ParamSet, layout: &ParamSet) -> Result<()> {
        if state.is_empty() {
            match self {
                Optimizer::RmsProp(o) => o.cache = None,
                Optimizer::Adam(o) => o.moments = None,
            }
            return Ok(());
        }
        let take = |prefix: &str| -> Result<ParamSet> {
            let set: ParamSet = state
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|rest| (rest.to_owned(), t.clone())))
                .collect();
            layout.check_layout(&set).map_err(|e| Error::ParamMismatch(format!("optimizer state `{prefix}`: {e}")))?;
            Ok(set)
        };
        match self {
            Optimizer::RmsProp(o) => o.cache = Some(take("cache/")?),
            Optimizer::Adam(o) => o.moments = Some((take("m/")?, take("v/")?)),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![value]));
        p
    }

    fn value(p: &ParamSet) -> f64 {
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let mut p = single(0.7);
        let mut opt = RmsProp::new(0.1, 0.9, 1e-8);
        opt.update(&mut p, &single(0.0)).unwrap();
        assert_eq!(value(&p), 0.7);
    }

    #[test]
    fn rmsprop_first_step_by_hand() {
        let mut p = single(0.0);
        let mut opt = RmsProp::new(0.1, 0.9, 1e-8);
        opt.update(&mut p, &single(1.0)).unwrap();
        // cache = 0.1, step = 0.1 / sqrt(0.1)
        assert_abs_diff_eq!(value(&p), -0.316_227_766, epsilon = 1e-6);
    }

    #[test]
    fn rmsprop_step_shrinks_as_cache_grows() {
        let mut p = single(0.0);
        let mut opt = RmsProp::new(0.1, 0.9, 1e-8);
        opt.update(&mut p, &single(1.0)).unwrap();
        let first = -value(&p);
        opt.update(&mut p, &single(1.0)).unwrap();
        let second = -value(&p) - first;
        assert!(second > 0.0 && second < first);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = single(-1.5);
        Adam::new(0.001, 0.9, 0.999, 1e-8).update(&mut p, &single(0.0)).unwrap();
        assert_eq!(value(&p), -1.5);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = single(0.0);
        Adam::new(0.001, 0.9, 0.999, 1e-8).update(&mut p, &single(1.0)).unwrap();
        assert_abs_diff_eq!(value(&p), -0.001, epsilon = 1e-10);
    }

    #[test]
    fn name_mismatch_is_an_error() {
        let mut p = single(0.0);
        let mut g = ParamSet::new();
        g.insert("x", Tensor::vector(vec![1.0]));
        assert!(RmsProp::new(0.1, 0.9, 1e-8).update(&mut p, &g).is_err());
        assert!(Adam::new(0.1, 0.9, 0.999, 1e-8).update(&mut p, &g).is_err());
    }

    #[test]
    fn state_round_trips() {
        let mut p = single(0.2);
        let mut opt = Optimizer::with_defaults(OptimizerKind::Adam, 0.01);
        opt.update(&mut p, &single(0.3)).unwrap();
        let mut fresh = Optimizer::with_defaults(OptimizerKind::Adam, 0.01);
        fresh.restore_state(&opt.state(), &p).unwrap();
        assert_eq!(fresh, opt);
    }

    proptest! {
        #[test]
        fn adam_moves_against_constant_gradient(g in -10.0f64..10.0, steps in 1usize..20) {
            prop_assume!(g.abs() > 1e-6);
            let mut p = single(0.0);
            let mut opt = Adam::new(0.001, 0.9, 0.999, 1e-8);
            let mut prev = 0.0;
            for _ in 0..steps {
                opt.update(&mut p, &single(g)).unwrap();
                let delta = value(&p) - prev;
                prop_assert!(delta * g < 0.0);
                prev = value(&p);
            }
        }

        #[test]
        fn updates_stay_finite(g in proptest::collection::vec(-1e6f64..1e6, 1..8), lr in 1e-5f64..1.0) {
            let mut p = ParamSet::new();
            p.insert("w", Tensor::vector(vec![0.0; g.len()]));
            let mut grads = ParamSet::new();
            grads.insert("w", Tensor::vector(g));
            for kind in [OptimizerKind::RmsProp, OptimizerKind::Adam] {
                let mut q = p.clone();
                let mut opt = Optimizer::with_defaults(kind, lr);
                for _ in 0..3 {
                    opt.update(&mut q, &grads).unwrap();
                }
                prop_assert!(q.is_finite());
            }
        }
    }
}
