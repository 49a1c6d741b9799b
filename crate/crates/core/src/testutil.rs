//! Numerical oracles shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Central finite differences of `f` at `x`.
pub fn fd_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = vec![0.0; x.len()];
    let mut probe = x.clone();
    for (i, o) in out.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        *o = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Asserts elementwise agreement: relative error below `rel`, or absolute
/// error below `abs` where both values are tiny.
#[track_caller]
pub fn assert_close(got: &Tensor, want: &Tensor, rel: f64, abs: f64) {
    assert_eq!(got.shape(), want.shape());
    for (i, (&g, &w)) in got.data().iter().zip(want.data()).enumerate() {
        let err = (g - w).abs();
        let scale = g.abs().max(w.abs());
        assert!(
            err <= abs || err <= rel * scale,
            "element {i}: got {g}, want {w} (err {err:e})"
        );
    }
}
