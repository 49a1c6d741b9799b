use super::{AutodiffError, Tensor};

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self::with_hyper(shape, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(shape: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update; returns the new parameter value.
pub fn adam_step(
    param: &Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
) -> Result<Tensor, AutodiffError> {
    for other in [grad, &state.m, &state.v] {
        if other.shape() != param.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - b2.powi(state.step.min(i32::MAX as u64) as i32);
    let step_size = lr / bc1;
    let bc2_sqrt = bc2.sqrt();

    let mut out = param.clone();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in out.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let p = Tensor::vector(&[1.0, -2.0, 3.0]);
        let mut s = AdamState::new(&[3]);
        let q = adam_step(&p, &Tensor::zeros(&[3]), &mut s, 0.1).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let p = Tensor::vector(&[0.0, 0.0, 0.0]);
        let g = Tensor::vector(&[3.0, -0.5, 1e-3]);
        let mut s = AdamState::new(&[3]);
        let lr = 1e-3;
        let q = adam_step(&p, &g, &mut s, lr).unwrap();
        for (&qi, &gi) in q.data().iter().zip(g.data()) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((qi - expected).abs() < 1e-12, "{qi} vs {expected}");
            assert!((qi.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = AdamState::new(&[2]);
        let err = adam_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &mut s, 0.1);
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x) = |x|^2, grad = 2x
        let mut x = Tensor::vector(&[1.0, 1.0]);
        let mut s = AdamState::new(&[2]);
        for _ in 0..1000 {
            let g = x.map(|xi| 2.0 * xi);
            x = adam_step(&x, &g, &mut s, 0.01).unwrap();
        }
        assert!(x.norm() < 1e-3, "{:?}", x);
    }
}
