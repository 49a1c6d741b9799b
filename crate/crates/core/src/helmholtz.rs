//! Helmholtz–Hodge decomposition of vector fields on periodic cubic lattices.
//!
//! Projection happens in Fourier space with the wavevector of the central
//! difference operator, `k_eff = n·sin(2πm/n)`, so the discrete divergence of
//! the solenoidal part and the discrete curl of the conservative part vanish
//! to rounding error rather than to truncation error.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HelmholtzError {
    #[error("grid must be cubic, got {0:?}")]
    NotCubic([usize; 3]),
    #[error("grid size {0} must be at least 4")]
    BadSize(usize),
    #[error("expected {expected} lattice values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("grid sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

/// A 3-vector per site of a periodic `n³` lattice on the unit torus.
///
/// Site `(i, j, k)` sits at `(i/n, j/n, k/n)` and is stored at `(i·n + j)·n + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    values: Vec<[f64; 3]>,
}

impl GridField {
    pub fn new(dims: [usize; 3], values: Vec<[f64; 3]>) -> Result<Self, HelmholtzError> {
        if dims[0] != dims[1] || dims[1] != dims[2] {
            return Err(HelmholtzError::NotCubic(dims));
        }
        let n = dims[0];
        if n < 4 {
            return Err(HelmholtzError::BadSize(n));
        }
        if values.len() != n * n * n {
            return Err(HelmholtzError::ValueCount {
                expected: n * n * n,
                got: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Result<Self, HelmholtzError> {
        Self::new([n; 3], vec![[0.0; 3]; n * n * n])
    }

    /// Samples `f` at every lattice site.
    pub fn from_fn(n: usize, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self, HelmholtzError> {
        let mut values = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    values.push(f([
                        i as f64 / n as f64,
                        j as f64 / n as f64,
                        k as f64 / n as f64,
                    ]));
                }
            }
        }
        Self::new([n; 3], values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.values[self.index(i, j, k)]
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Lattice inner product `Σ F(x)·G(x)`.
    pub fn inner(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
            .sum()
    }

    pub fn add(&self, other: &GridField) -> Result<GridField, HelmholtzError> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField, HelmholtzError> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(
        &self,
        other: &GridField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<GridField, HelmholtzError> {
        if self.n != other.n {
            return Err(HelmholtzError::SizeMismatch(self.n, other.n));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| [0, 1, 2].map(|c| f(a[c], b[c])))
            .collect();
        Ok(GridField { n: self.n, values })
    }

    /// Adds a constant vector to every site.
    pub fn offset(&self, c: [f64; 3]) -> GridField {
        GridField {
            n: self.n,
            values: self
                .values
                .iter()
                .map(|v| [v[0] + c[0], v[1] + c[1], v[2] + c[2]])
                .collect(),
        }
    }

    /// Central difference of component `c` along `axis`, spacing `1/n`.
    fn diff(&self, c: usize, axis: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n;
        let mut fwd = [i, j, k];
        let mut bwd = [i, j, k];
        fwd[axis] = (fwd[axis] + 1) % n;
        bwd[axis] = (bwd[axis] + n - 1) % n;
        let a = self.get(fwd[0], fwd[1], fwd[2])[c];
        let b = self.get(bwd[0], bwd[1], bwd[2])[c];
        (a - b) * n as f64 / 2.0
    }
}

/// Central-difference divergence, one scalar per site.
pub fn divergence(f: &GridField) -> Vec<f64> {
    let n = f.n;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push((0..3).map(|a| f.diff(a, a, i, j, k)).sum());
            }
        }
    }
    out
}

/// Central-difference curl.
pub fn curl(f: &GridField) -> GridField {
    let n = f.n;
    let mut values = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let d = |c, a| f.diff(c, a, i, j, k);
                values.push([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)]);
            }
        }
    }
    GridField { n, values }
}

/// Result of [`decompose`]: `F = conservative + solenoidal + mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub conservative: GridField,
    pub solenoidal: GridField,
    pub mean: [f64; 3],
}

/// Splits a periodic field into curl-free, divergence-free and constant parts.
///
/// Nonzero modes whose central-difference wavevector vanishes (every axis at
/// index 0 or n/2) are both curl- and divergence-free on the lattice; they are
/// assigned to the solenoidal part.
pub fn decompose(f: &GridField) -> Decomposition {
    let n = f.n;
    let mut spec: [Vec<Complex64>; 3] =
        [0, 1, 2].map(|c| f.values.iter().map(|v| Complex64::new(v[c], 0.0)).collect());
    for s in &mut spec {
        fft3(s, n, false);
    }
    let keff: Vec<f64> = (0..n)
        .map(|m| n as f64 * (2.0 * PI * m as f64 / n as f64).sin())
        .collect();
    let total = (n * n * n) as f64;
    let mean = [0, 1, 2].map(|c| spec[c][0].re / total);
    let mut cons: [Vec<Complex64>; 3] = [0, 1, 2].map(|_| vec![Complex64::ZERO; n * n * n]);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let idx = (a * n + b) * n + c;
                let k = [keff[a], keff[b], keff[c]];
                let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                if idx == 0 || k2 < 1e-12 {
                    continue;
                }
                let dot = spec[0][idx] * k[0] + spec[1][idx] * k[1] + spec[2][idx] * k[2];
                for ax in 0..3 {
                    cons[ax][idx] = dot * (k[ax] / k2);
                }
            }
        }
    }
    for ax in 0..3 {
        for (s, c) in spec[ax].iter_mut().zip(&cons[ax]) {
            *s -= *c;
        }
        spec[ax][0] = Complex64::ZERO;
    }
    for s in spec.iter_mut().chain(cons.iter_mut()) {
        fft3(s, n, true);
    }
    let assemble = |parts: &[Vec<Complex64>; 3]| GridField {
        n,
        values: (0..n * n * n)
            .map(|i| [parts[0][i].re, parts[1][i].re, parts[2][i].re])
            .collect(),
    };
    Decomposition {
        conservative: assemble(&cons),
        solenoidal: assemble(&spec),
        mean,
    }
}

/// 3D transform as three passes of 1D transforms; the inverse includes the
/// `1/n³` factor.
fn fft3(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::ZERO; n];
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    for stride in [n * n, n, 1] {
        for base in 0..n * n * n {
            // Visit each line once, from the site whose coordinate on this axis is zero.
            if (base / stride) % n != 0 {
                continue;
            }
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (t, v) in line.iter().enumerate() {
                data[base + t * stride] = *v;
            }
        }
    }
    if inverse {
        let s = 1.0 / (n * n * n) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    const TAU: f64 = 2.0 * PI;

    /// A few low-frequency modes with random amplitudes and phases.
    fn band_limited(n: usize, seed: u64) -> GridField {
        let mut r = rng(seed);
        let modes: Vec<([f64; 3], [f64; 3], f64)> = (0..6)
            .map(|_| {
                let m = [0; 3].map(|_| r.gen_range(-2i32..=2) as f64);
                let amp = [0; 3].map(|_| r.gen_range(-1.0..1.0));
                (m, amp, r.gen_range(0.0..TAU))
            })
            .collect();
        let c = [0; 3].map(|_| r.gen_range(-1.0..1.0));
        GridField::from_fn(n, |x| {
            let mut v = c;
            for (m, amp, ph) in &modes {
                let s = (TAU * (m[0] * x[0] + m[1] * x[1] + m[2] * x[2]) + ph).sin();
                for a in 0..3 {
                    v[a] += amp[a] * s;
                }
            }
            v
        })
        .unwrap()
    }

    #[test]
    fn transform_round_trip_and_plane_wave() {
        let n = 8;
        let mut r = rng(1);
        let orig: Vec<Complex64> = (0..n * n * n)
            .map(|_| Complex64::new(r.gen(), r.gen()))
            .collect();
        let mut buf = orig.clone();
        fft3(&mut buf, n, false);
        fft3(&mut buf, n, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-13);
        }
        // exp(2πi·x) along the last axis lands on a single coefficient.
        let mut wave: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::from_polar(1.0, TAU * (i % n) as f64 / n as f64))
            .collect();
        fft3(&mut wave, n, false);
        for (i, v) in wave.iter().enumerate() {
            let want = if i == 1 { (n * n * n) as f64 } else { 0.0 };
            assert!((v - want).norm() < 1e-9, "{i} {v}");
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(
            GridField::new([8, 8, 4], vec![[0.0; 3]; 256]),
            Err(HelmholtzError::NotCubic([8, 8, 4]))
        );
        assert!(GridField::zeros(6).is_ok());
        assert_eq!(GridField::zeros(2), Err(HelmholtzError::BadSize(2)));
    }

    #[test]
    fn zero_field_decomposes_to_zero() {
        let d = decompose(&GridField::zeros(8).unwrap());
        assert_eq!(d.conservative.max_norm(), 0.0);
        assert_eq!(d.solenoidal.max_norm(), 0.0);
        assert_eq!(d.mean, [0.0; 3]);
    }

    #[test]
    fn pure_gradient_and_pure_curl() {
        for n in [8, 16, 32] {
            // ∇ sin(2πx)
            let grad = GridField::from_fn(n, |x| [TAU * (TAU * x[0]).cos(), 0.0, 0.0]).unwrap();
            let d = decompose(&grad);
            assert!(d.solenoidal.max_norm() < 1e-8, "n={n}");
            // curl (0, 0, sin 2πx) = (0, −2π cos 2πx, 0)
            let rot = GridField::from_fn(n, |x| [0.0, -TAU * (TAU * x[0]).cos(), 0.0]).unwrap();
            let d = decompose(&rot);
            assert!(d.conservative.max_norm() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn reconstruction_orthogonality_idempotence() {
        for (n, seed) in [(8, 2), (16, 3), (32, 4)] {
            let f = band_limited(n, seed);
            let d = decompose(&f);
            let back = d.conservative.add(&d.solenoidal).unwrap().offset(d.mean);
            assert!(f.sub(&back).unwrap().max_norm() < 1e-10);
            let ip = d.conservative.inner(&d.solenoidal).abs();
            assert!(ip < 1e-8 * d.conservative.l2_norm() * d.solenoidal.l2_norm());
            let again = decompose(&d.conservative);
            assert!(again.conservative.sub(&d.conservative).unwrap().max_norm() < 1e-10);
            assert!(again.solenoidal.max_norm() < 1e-10);
            assert!(again.mean.iter().all(|m| m.abs() < 1e-12));
        }
    }

    #[test]
    fn parts_are_discretely_div_and_curl_free() {
        let f = band_limited(16, 5);
        let d = decompose(&f);
        let div = divergence(&d.solenoidal);
        assert!(div.iter().all(|v| v.abs() < 1e-6));
        assert!(curl(&d.conservative).max_norm() < 1e-6);
    }

    #[test]
    fn difference_operators() {
        let c = GridField::from_fn(8, |_| [1.0, -2.0, 0.5]).unwrap();
        assert!(divergence(&c).iter().all(|v| v.abs() < 1e-12));
        assert!(curl(&c).max_norm() < 1e-12);
        // sin(2πx) in x: divergence ≈ 2π cos(2πx), error O(1/n²).
        let mut errs = Vec::new();
        for n in [16, 32] {
            let f = GridField::from_fn(n, |x| [(TAU * x[0]).sin(), 0.0, 0.0]).unwrap();
            let div = divergence(&f);
            let mut e: f64 = 0.0;
            for i in 0..n {
                let want = TAU * (TAU * i as f64 / n as f64).cos();
                e = e.max((div[i * n * n] - want).abs());
            }
            errs.push(e);
        }
        assert!(errs[0] < 1.0 && errs[1] < errs[0] / 3.5, "{errs:?}");
        let a = band_limited(16, 6);
        assert!(divergence(&curl(&a)).iter().all(|v| v.abs() < 1e-8));
    }
}
