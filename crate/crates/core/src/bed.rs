//! Boltzmann equilibrium decomposition.
//!
//! Every primitive carries a spatial anchor `mu_eq` and temporal anchors
//! `t_eq`. Its distance from those anchors is turned into an energy, the
//! energy into a soft mask `M ∈ (γ, 1]`, and the mask decides how much of
//! the predicted deformation is applied: `M = 1` keeps the primitive where
//! it is, `M → γ` lets it move almost freely.
//!
//! Scalar functions below operate on one primitive. The `*_graph` variants
//! do the same on `[n, k]` tape values so that training can push gradients
//! into the anchors and the sensitivities.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Var};
use crate::gauss::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BedError {
    #[error("invalid equilibrium config: {0}")]
    InvalidConfig(String),
    #[error("mask {0} outside [0, 1]")]
    MaskOutOfRange(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BedConfig {
    pub sigma_s: f64,
    pub sigma_t: f64,
    pub coupling_lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl BedConfig {
    /// Defaults for a scene whose bounding box has the given diagonal.
    pub fn for_diagonal(diagonal: f64) -> Self {
        Self {
            sigma_s: 0.1 * diagonal,
            sigma_t: 0.2,
            coupling_lambda: 0.1,
            beta: 1.0,
            gamma: 0.05,
        }
    }

    pub fn validate(&self) -> Result<(), BedError> {
        let bad = |m: String| Err(BedError::InvalidConfig(m));
        if !(self.sigma_s > 0.0) || !(self.sigma_t > 0.0) {
            return bad(format!(
                "sensitivities must be positive (sigma_s={}, sigma_t={})",
                self.sigma_s, self.sigma_t
            ));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.coupling_lambda.abs() < 1.0) {
            return bad(format!(
                "|coupling_lambda| must be below 1, got {}",
                self.coupling_lambda
            ));
        }
        Ok(())
    }
}

impl Default for BedConfig {
    fn default() -> Self {
        Self::for_diagonal(2.0 * 3f64.sqrt())
    }
}

/// `(‖mu − mu_eq‖ / σ_s, (t − t_eq) / σ_t)`.
pub fn deviations(mu: Vec3, mu_eq: Vec3, t: f64, t_eq: f64, cfg: &BedConfig) -> (f64, f64) {
    let d = (0..3)
        .map(|k| (mu[k] - mu_eq[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    (d / cfg.sigma_s, (t - t_eq) / cfg.sigma_t)
}

pub fn spatial_temporal_energy(dd: f64, dtau: f64, cfg: &BedConfig) -> f64 {
    0.5 * (dd * dd + dtau * dtau) + cfg.coupling_lambda * dd * dtau
}

pub fn temporal_energy(t: f64, t_eq: f64, cfg: &BedConfig) -> f64 {
    let x = (t - t_eq) / cfg.sigma_t;
    0.5 * x * x
}

pub fn boltzmann_mask(energy: f64, cfg: &BedConfig) -> f64 {
    (1.0 - cfg.gamma) * (-cfg.beta * energy).exp() + cfg.gamma
}

fn check_mask(m: f64) -> Result<(), BedError> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(BedError::MaskOutOfRange(m))
    }
}

/// `mu_tilde ⊙ (1 − M) + mu ⊙ M`.
pub fn blend_position(mu: Vec3, mu_tilde: Vec3, m: f64) -> Result<Vec3, BedError> {
    check_mask(m)?;
    Ok([0, 1, 2].map(|k| mu_tilde[k] * (1.0 - m) + mu[k] * m))
}

/// `s + Δs ⊙ (1 − M)`.
pub fn blend_scale(s: Vec3, ds: Vec3, m: f64) -> Result<Vec3, BedError> {
    check_mask(m)?;
    Ok([0, 1, 2].map(|k| s[k] + ds[k] * (1.0 - m)))
}

type GraphResult<'t> = Result<Var<'t>, AutodiffError>;

/// Batched deviations. `mu`, `mu_eq` are `[n,3]`; `t`, `t_eq` are `[n,1]`;
/// the sensitivities are one-element values. Returns two `[n,1]` columns.
pub fn deviations_graph<'t>(
    mu: Var<'t>,
    mu_eq: Var<'t>,
    t: Var<'t>,
    t_eq: Var<'t>,
    sigma_s: Var<'t>,
    sigma_t: Var<'t>,
) -> Result<(Var<'t>, Var<'t>), AutodiffError> {
    let col = t.shape();
    let dist = mu.sub(mu_eq)?.row_norm()?;
    let dd = dist.div(sigma_s.expand(&col)?)?;
    let dtau = t.sub(t_eq)?.div(sigma_t.expand(&col)?)?;
    Ok((dd, dtau))
}

pub fn spatial_temporal_energy_graph<'t>(
    dd: Var<'t>,
    dtau: Var<'t>,
    lambda: f64,
) -> GraphResult<'t> {
    let quad = dd.square()?.add(dtau.square()?)?.scale(0.5)?;
    quad.add(dd.mul(dtau)?.scale(lambda)?)
}

pub fn temporal_energy_graph<'t>(dtau: Var<'t>) -> GraphResult<'t> {
    dtau.square()?.scale(0.5)
}

pub fn boltzmann_mask_graph<'t>(energy: Var<'t>, cfg: &BedConfig) -> GraphResult<'t> {
    energy
        .scale(-cfg.beta)?
        .exp()?
        .affine(1.0 - cfg.gamma, cfg.gamma)
}

/// `mu_tilde + (mu − mu_tilde) ⊙ M` for `[n,3]` positions and an `[n,1]` mask.
pub fn blend_position_graph<'t>(mu: Var<'t>, mu_tilde: Var<'t>, m: Var<'t>) -> GraphResult<'t> {
    // Written as an increment on `mu` so that zero motion or `M = 1` give `mu` bit for bit.
    mu.add(mu_tilde.sub(mu)?.mul_col(m.affine(-1.0, 1.0)?)?)
}

pub fn blend_scale_graph<'t>(s: Var<'t>, ds: Var<'t>, m: Var<'t>) -> GraphResult<'t> {
    s.add(ds.mul_col(m.affine(-1.0, 1.0)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::testutil::{assert_close, fd_grad, random_tensor, rng};
    use proptest::prelude::*;

    fn cfg(lambda: f64, beta: f64, gamma: f64) -> BedConfig {
        BedConfig {
            sigma_s: 1.0,
            sigma_t: 1.0,
            coupling_lambda: lambda,
            beta,
            gamma,
        }
    }

    #[test]
    fn deviation_examples() {
        let c = BedConfig {
            sigma_s: 5.0,
            sigma_t: 0.2,
            ..BedConfig::default()
        };
        assert_eq!(deviations([1.0; 3], [1.0; 3], 0.3, 0.3, &c), (0.0, 0.0));
        assert_eq!(deviations([3.0, 4.0, 0.0], [0.0; 3], 0.0, 0.0, &c).0, 1.0);
        let (dd, dtau) = deviations([5.0, 0.0, 0.0], [0.0; 3], 0.7, 0.5, &c);
        assert!((dd - 1.0).abs() < 1e-15 && (dtau - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_and_mask_examples() {
        let c = cfg(0.0, 1.0, 0.1);
        assert_eq!(spatial_temporal_energy(0.0, 0.0, &c), 0.0);
        assert_eq!(spatial_temporal_energy(1.0, 1.0, &c), 1.0);
        assert_eq!(spatial_temporal_energy(1.0, 2.0, &cfg(0.5, 1.0, 0.1)), 3.5);
        let ct = BedConfig { sigma_t: 0.2, ..c };
        assert_eq!(temporal_energy(0.4, 0.4, &ct), 0.0);
        assert!((temporal_energy(0.6, 0.4, &ct) - 0.5).abs() < 1e-12);
        assert!((temporal_energy(0.8, 0.4, &ct) - 2.0).abs() < 1e-12);
        assert_eq!(boltzmann_mask(0.0, &c), 1.0);
        assert!((boltzmann_mask(1e6, &c) - 0.1).abs() < 1e-12);
        assert!((boltzmann_mask(2f64.ln(), &c) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn default_mask_one_sigma_away() {
        let c = BedConfig::for_diagonal(1.0);
        let (dd, dtau) = deviations([0.1, 0.0, 0.0], [0.0; 3], 0.5, 0.5, &c);
        let m = boltzmann_mask(spatial_temporal_energy(dd, dtau, &c), &c);
        assert!((m - 0.62).abs() < 0.01, "{m}");
    }

    #[test]
    fn blend_examples() {
        let (mu, mt) = ([0.0; 3], [2.0; 3]);
        assert_eq!(blend_position(mu, mt, 1.0).unwrap(), mu);
        assert_eq!(blend_position(mu, mt, 0.0).unwrap(), mt);
        assert_eq!(blend_position(mu, mt, 0.5).unwrap(), [1.0; 3]);
        assert!(blend_position(mu, mt, 1.5).is_err());
        let s = [0.3, 0.2, 0.1];
        assert_eq!(blend_scale(s, [4.0, 0.0, 0.0], 1.0).unwrap(), s);
        assert_eq!(
            blend_scale(s, [4.0, 0.0, 0.0], 0.0).unwrap(),
            [4.3, 0.2, 0.1]
        );
        assert_eq!(
            blend_scale(s, [4.0, 0.0, 0.0], 0.75).unwrap(),
            [1.3, 0.2, 0.1]
        );
    }

    #[test]
    fn config_validation() {
        assert!(BedConfig::default().validate().is_ok());
        for bad in [
            cfg(1.0, 1.0, 0.1),
            cfg(0.0, 0.0, 0.1),
            cfg(0.0, 1.0, 1.0),
            BedConfig {
                sigma_s: -1.0,
                ..cfg(0.0, 1.0, 0.0)
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn energy_nonnegative_on_grid() {
        for lambda in [-0.99, -0.5, 0.0, 0.5, 0.99] {
            let c = cfg(lambda, 1.0, 0.0);
            for i in 0..100 {
                for j in 0..100 {
                    let dd = i as f64 * 0.05;
                    let dtau = -2.5 + j as f64 * 0.05;
                    assert!(spatial_temporal_energy(dd, dtau, &c) >= 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn mask_is_monotone_and_bounded(
            e1 in 0.0f64..5.0, de in 1e-3f64..5.0,
            beta in 0.1f64..3.0, gamma in 0.0f64..0.9,
        ) {
            let c = cfg(0.0, beta, gamma);
            let (m1, m2) = (boltzmann_mask(e1, &c), boltzmann_mask(e1 + de, &c));
            prop_assert!(m1 > m2);
            prop_assert!(m1 <= 1.0 && m2 > gamma);
        }

        #[test]
        fn blend_stays_on_segment(
            mu in prop::array::uniform3(-5.0f64..5.0),
            mt in prop::array::uniform3(-5.0f64..5.0),
            m in 0.0f64..=1.0,
        ) {
            let out = blend_position(mu, mt, m).unwrap();
            for k in 0..3 {
                let (lo, hi) = (mu[k].min(mt[k]), mu[k].max(mt[k]));
                prop_assert!(out[k] >= lo - 1e-12 && out[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn graph_matches_scalar_path() {
        let c = BedConfig {
            sigma_s: 0.3,
            sigma_t: 0.2,
            coupling_lambda: 0.4,
            beta: 1.5,
            gamma: 0.05,
        };
        let mut r = rng(30);
        let mu = random_tensor(&mut r, &[4, 3], -1.0, 1.0);
        let mu_eq = random_tensor(&mut r, &[4, 3], -1.0, 1.0);
        let t_eq = random_tensor(&mut r, &[4, 1], 0.0, 1.0);
        let tape = Tape::new();
        let (dd, dtau) = deviations_graph(
            tape.constant(mu.clone()),
            tape.constant(mu_eq.clone()),
            tape.constant(Tensor::full(&[4, 1], 0.3)),
            tape.constant(t_eq.clone()),
            tape.scalar(c.sigma_s),
            tape.scalar(c.sigma_t),
        )
        .unwrap();
        let e = spatial_temporal_energy_graph(dd, dtau, c.coupling_lambda).unwrap();
        let m = boltzmann_mask_graph(e, &c).unwrap().value();
        for i in 0..4 {
            let row = |t: &Tensor| [0, 1, 2].map(|k| t.data()[i * 3 + k]);
            let (a, b) = deviations(row(&mu), row(&mu_eq), 0.3, t_eq.data()[i], &c);
            let want = boltzmann_mask(spatial_temporal_energy(a, b, &c), &c);
            assert!((m.data()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_reach_anchors_and_sensitivities() {
        let c = BedConfig {
            sigma_s: 0.3,
            sigma_t: 0.2,
            coupling_lambda: 0.4,
            beta: 1.5,
            gamma: 0.05,
        };
        let mut r = rng(31);
        let mu = random_tensor(&mut r, &[3, 3], -1.0, 1.0);
        let mu_tilde = random_tensor(&mut r, &[3, 3], -1.0, 1.0);
        let x0 = [
            random_tensor(&mut r, &[3, 3], -1.0, 1.0),
            random_tensor(&mut r, &[3, 1], 0.0, 1.0),
            Tensor::scalar(0.3),
            Tensor::scalar(0.2),
        ];
        // Blended position loss as a function of (mu_eq, t_eq, σ_s, σ_t).
        fn eval<'t>(
            tape: &'t Tape,
            x: &[Tensor; 4],
            mu: &Tensor,
            mu_tilde: &Tensor,
            c: &BedConfig,
        ) -> (Var<'t>, Vec<Var<'t>>) {
            let leaves: Vec<Var> = x.iter().map(|v| tape.leaf(v.clone())).collect();
            let t = tape.constant(Tensor::full(&[3, 1], 0.6));
            let mu = tape.constant(mu.clone());
            let (dd, dtau) =
                deviations_graph(mu, leaves[0], t, leaves[1], leaves[2], leaves[3]).unwrap();
            let e = spatial_temporal_energy_graph(dd, dtau, c.coupling_lambda).unwrap();
            let m = boltzmann_mask_graph(e, c).unwrap();
            let out = blend_position_graph(mu, tape.constant(mu_tilde.clone()), m).unwrap();
            (out.square().unwrap().sum().unwrap(), leaves)
        }
        let tape = Tape::new();
        let (loss, leaves) = eval(&tape, &x0, &mu, &mu_tilde, &c);
        let grads = tape.grad(loss, &leaves).unwrap().values();
        for k in 0..4 {
            let mut f = |p: &Tensor| {
                let mut x = x0.clone();
                x[k] = p.clone();
                let t = Tape::new();
                eval(&t, &x, &mu, &mu_tilde, &c).0.item().unwrap()
            };
            let want = fd_grad(&mut f, &x0[k], 1e-6);
            assert!(want.max_abs() > 1e-6, "input {k} has no influence");
            assert_close(&grads[k], &want, 1e-5, 1e-8);
        }
    }
}
