use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Temporal-difference loss on the taken action's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `0.5 * (q - y)^2`
    Mse,
    /// Quadratic within `delta` of the target, linear beyond.
    Huber { delta: f64 },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Huber { delta: 1.0 }
    }
}

impl LossKind {
    pub fn value_and_grad(self, residual: f64) -> (f64, f64) {
        match self {
            LossKind::Mse => (0.5 * residual * residual, residual),
            LossKind::Huber { delta } => {
                if residual.abs() <= delta {
                    (0.5 * residual * residual, residual)
                } else {
                    (delta * (residual.abs() - 0.5 * delta), delta * residual.signum())
                }
            }
        }
    }
}

/// Loss of `q[action]` against `target`, and its gradient with respect to
/// the whole `q` vector (zero except at `action`).
pub fn td_loss(q: &Tensor, action: usize, target: f64, kind: LossKind) -> Result<(f64, Tensor)> {
    if action >= q.len() {
        return Err(Error::OutOfRange { index: action, len: q.len() });
    }
    let (loss, grad) = kind.value_and_grad(q.data()[action] - target);
    let mut dq = Tensor::zeros(q.shape());
    dq.data_mut()[action] = grad;
    Ok((loss, dq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual() {
        let q = Tensor::vector(vec![1.0, 2.0]);
        for kind in [LossKind::Mse, LossKind::default()] {
            let (loss, dq) = td_loss(&q, 1, 2.0, kind).unwrap();
            assert_eq!(loss, 0.0);
            assert!(dq.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mse_by_hand() {
        let q = Tensor::vector(vec![7.0, 2.0, -1.0]);
        let (loss, dq) = td_loss(&q, 1, 3.0, LossKind::Mse).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(dq.data(), &[0.0, -1.0, 0.0]);
    }

    #[test]
    fn huber_clips_gradient() {
        let q = Tensor::vector(vec![5.0, 0.0]);
        let (loss, dq) = td_loss(&q, 0, 0.0, LossKind::Huber { delta: 1.0 }).unwrap();
        assert_eq!(dq.data(), &[1.0, 0.0]);
        assert_eq!(loss, 4.5);
        let (_, dq) = td_loss(&q, 1, 4.0, LossKind::Huber { delta: 1.0 }).unwrap();
        assert_eq!(dq.data(), &[0.0, -1.0]);
    }

    #[test]
    fn huber_matches_mse_inside_delta() {
        let q = Tensor::vector(vec![0.3]);
        let a = td_loss(&q, 0, 0.1, LossKind::Huber { delta: 1.0 }).unwrap();
        let b = td_loss(&q, 0, 0.1, LossKind::Mse).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn action_out_of_range() {
        let q = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(td_loss(&q, 2, 0.0, LossKind::Mse).unwrap_err(), Error::OutOfRange { index: 2, len: 2 });
    }
}
