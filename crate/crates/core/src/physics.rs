//! Position Verlet and the rigidity clamp on rotation increments.

use std::rc::Rc;

use thiserror::Error;

use crate::autodiff::{AutodiffError, CustomOp, Tensor, Var};
use crate::gauss::{
    quat_angle, quat_mul, quat_norm, quat_normalize, GaussError, Quat, Vec3, IDENTITY_QUAT,
    UNIT_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("rotation increment {0:?} is zero")]
    ZeroIncrement(Quat),
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

/// Below this vector-part norm an increment counts as no rotation.
pub const AXIS_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub phi_max: f64,
}

impl IntegratorConfig {
    /// One step per frame of a sequence with `frames` timestamps in `[0, 1]`.
    pub fn for_frames(frames: usize) -> Self {
        let dt = if frames > 1 {
            1.0 / (frames - 1) as f64
        } else {
            1.0
        };
        Self { dt, phi_max: 0.35 }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.dt > 0.0) {
            return Err(PhysicsError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.phi_max > 0.0 && self.phi_max <= std::f64::consts::PI) {
            return Err(PhysicsError::InvalidConfig(format!(
                "phi_max must lie in (0, π], got {}",
                self.phi_max
            )));
        }
        Ok(())
    }
}

/// `mu + dt·Δmu + dt²/2·F`.
pub fn verlet_position(mu: Vec3, dmu: Vec3, force: Vec3, dt: f64) -> Vec3 {
    [0, 1, 2].map(|k| mu[k] + dt * dmu[k] + 0.5 * dt * dt * force[k])
}

/// Squashes the rotation angle of `dr` through `φ_max·tanh(φ/φ_max)`,
/// keeping its axis.
pub fn clamp_rotation(dr: Quat, phi_max: f64) -> Result<Quat, PhysicsError> {
    if !(quat_norm(dr) > 1e-12) {
        return Err(PhysicsError::ZeroIncrement(dr));
    }
    Ok(clamp_row(dr, phi_max).0)
}

pub fn apply_rotation(r: Quat, dr: Quat) -> Result<Quat, PhysicsError> {
    for q in [r, dr] {
        if (quat_norm(q) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GaussError::NotUnit(q).into());
        }
    }
    Ok(quat_normalize(quat_mul(r, dr))?)
}

struct ClampParts {
    w: f64,
    n: f64,
    u: [f64; 3],
    phi: f64,
    phi_c: f64,
}

fn clamp_row(dr: Quat, phi_max: f64) -> (Quat, Option<ClampParts>) {
    let w = dr[0];
    let g = [dr[1], dr[2], dr[3]];
    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if n < AXIS_EPS {
        return (IDENTITY_QUAT, None);
    }
    let phi = 2.0 * n.atan2(w);
    let phi_c = phi_max * (phi / phi_max).tanh();
    let (s, c) = (0.5 * phi_c).sin_cos();
    let u = g.map(|x| x / n);
    (
        [c, s * u[0], s * u[1], s * u[2]],
        Some(ClampParts {
            w,
            n,
            u,
            phi,
            phi_c,
        }),
    )
}

struct ClampRotation {
    phi_max: f64,
}

impl CustomOp for ClampRotation {
    fn name(&self) -> &'static str {
        "clamp_rotation"
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        if !needs[0] {
            return Ok(vec![None]);
        }
        let x = inputs[0].data();
        let go = grad_output.data();
        let mut out = vec![0.0; x.len()];
        for (i, o) in out.chunks_exact_mut(4).enumerate() {
            let row = [x[4 * i], x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]];
            let gv = [go[4 * i + 1], go[4 * i + 2], go[4 * i + 3]];
            match clamp_row(row, self.phi_max).1 {
                None => {
                    // Limit of the vector part ≈ g/w for w > 0.
                    if row[0] > 0.0 {
                        for k in 0..3 {
                            o[k + 1] = gv[k] / row[0];
                        }
                    }
                }
                Some(ClampParts {
                    w,
                    n,
                    u,
                    phi,
                    phi_c,
                }) => {
                    let (s, c) = (0.5 * phi_c).sin_cos();
                    let gu = gv[0] * u[0] + gv[1] * u[1] + gv[2] * u[2];
                    let d_phic = -0.5 * s * go[4 * i] + 0.5 * c * gu;
                    let th = (phi / self.phi_max).tanh();
                    let d_phi = d_phic * (1.0 - th * th);
                    let r2 = w * w + n * n;
                    o[0] = d_phi * (-2.0 * n / r2);
                    let radial = d_phi * 2.0 * w / r2;
                    for k in 0..3 {
                        o[k + 1] = radial * u[k] + s / n * (gv[k] - gu * u[k]);
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape(), out)?)])
    }
}

/// Batched clamp on `[n,4]` increments. First-order differentiable only.
pub fn clamp_rotation_graph<'t>(dr: Var<'t>, phi_max: f64) -> Result<Var<'t>, AutodiffError> {
    let x = dr.value();
    match x.dims2() {
        Some((_, 4)) => {}
        _ => {
            return Err(AutodiffError::InvalidArgument(format!(
                "clamp_rotation on {:?}",
                x.shape()
            )))
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(4) {
        out.extend_from_slice(&clamp_row([row[0], row[1], row[2], row[3]], phi_max).0);
    }
    let value = Tensor::new(x.shape(), out)?;
    dr.tape()
        .custom(Rc::new(ClampRotation { phi_max }), &[dr], value)
}

/// Row-wise Hamilton product of two `[n,4]` quaternion batches.
pub fn quat_mul_graph<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    let ac: Vec<Var> = (0..4)
        .map(|k| a.slice_cols(k, k + 1))
        .collect::<Result<_, _>>()?;
    let bc: Vec<Var> = (0..4)
        .map(|k| b.slice_cols(k, k + 1))
        .collect::<Result<_, _>>()?;
    // (sign, i, j) per output component of the Hamilton product.
    const TERMS: [[(f64, usize, usize); 4]; 4] = [
        [(1.0, 0, 0), (-1.0, 1, 1), (-1.0, 2, 2), (-1.0, 3, 3)],
        [(1.0, 0, 1), (1.0, 1, 0), (1.0, 2, 3), (-1.0, 3, 2)],
        [(1.0, 0, 2), (-1.0, 1, 3), (1.0, 2, 0), (1.0, 3, 1)],
        [(1.0, 0, 3), (1.0, 1, 2), (-1.0, 2, 1), (1.0, 3, 0)],
    ];
    let mut cols = Vec::with_capacity(4);
    for terms in TERMS {
        let mut acc: Option<Var> = None;
        for (sign, i, j) in terms {
            let p = ac[i].mul(bc[j])?;
            acc = Some(match acc {
                None if sign > 0.0 => p,
                None => p.neg()?,
                Some(s) if sign > 0.0 => s.add(p)?,
                Some(s) => s.sub(p)?,
            });
        }
        cols.push(acc.expect("four terms"));
    }
    crate::autodiff::concat_cols(&cols)
}

/// Divides each row by its norm.
pub fn normalize_rows<'t>(x: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    x.mul_col(x.row_norm()?.safe_recip()?)
}

/// `normalize(r ⊗ dr)` on `[n,4]` batches.
pub fn apply_rotation_graph<'t>(r: Var<'t>, dr: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    normalize_rows(quat_mul_graph(r, dr)?)
}

/// Angle of the clamped increment, for diagnostics.
pub fn clamped_angle(dr: Quat, phi_max: f64) -> Result<f64, PhysicsError> {
    Ok(quat_angle(clamp_rotation(dr, phi_max)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gauss::{mat3_mul, quat_from_axis_angle, quat_to_rotmat};
    use crate::testutil::{assert_close, fd_grad, random_tensor, rng};
    use rand::Rng;

    fn random_unit(r: &mut impl Rng) -> Quat {
        quat_normalize([0; 4].map(|_| r.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn verlet_examples() {
        assert_eq!(
            verlet_position([1.0, 2.0, 3.0], [0.5; 3], [0.0; 3], 1.0),
            [1.5, 2.5, 3.5]
        );
        assert_eq!(
            verlet_position([0.0; 3], [0.0; 3], [0.0, 0.0, -2.0], 1.0),
            [0.0, 0.0, -1.0]
        );
    }

    #[test]
    fn verlet_is_affine() {
        let mut r = rng(40);
        for _ in 0..50 {
            let v: Vec<Vec3> = (0..5)
                .map(|_| [0; 3].map(|_| r.gen_range(-1.0..1.0)))
                .collect();
            let dt = r.gen_range(0.01..1.0);
            let sum = |a: Vec3, b: Vec3| [0, 1, 2].map(|k| a[k] + b[k]);
            let whole = verlet_position(v[0], sum(v[1], v[2]), sum(v[3], v[4]), dt);
            let a = verlet_position(v[0], v[1], v[3], dt);
            let b = verlet_position([0.0; 3], v[2], v[4], dt);
            for k in 0..3 {
                assert!((whole[k] - (a[k] + b[k])).abs() < 1e-14);
            }
        }
    }

    /// Energy drift of a unit harmonic oscillator under two integrators.
    fn oscillator_drift(symplectic: bool) -> f64 {
        let (mut x, mut v, dt) = (1.0f64, 0.0f64, 0.01);
        let e0 = 0.5 * (x * x + v * v);
        for _ in 0..10_000 {
            if symplectic {
                let a0 = -x;
                x = verlet_position([x, 0.0, 0.0], [v, 0.0, 0.0], [a0, 0.0, 0.0], dt)[0];
                v += 0.5 * dt * (a0 - x);
            } else {
                let a = -x;
                x += dt * v;
                v += dt * a;
            }
        }
        (0.5 * (x * x + v * v) - e0).abs() / e0
    }

    #[test]
    fn verlet_conserves_energy_better_than_euler() {
        assert!(oscillator_drift(true) < 0.01);
        assert!(oscillator_drift(false) > 0.1);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_rotation(IDENTITY_QUAT, 0.35).unwrap(), IDENTITY_QUAT);
        assert!(clamp_rotation([0.0; 4], 0.35).is_err());
        let phi = 0.01 * 0.35;
        let q = quat_from_axis_angle([0.0, 0.6, 0.8], phi);
        let got = quat_angle(clamp_rotation(q, 0.35).unwrap());
        assert!((got - phi).abs() < 1e-4 * phi);
    }

    #[test]
    fn clamp_properties() {
        let mut r = rng(41);
        let phi_max = 0.35;
        for _ in 0..1000 {
            let q = [0; 4].map(|_| r.gen_range(-1.0..1.0));
            let c = clamp_rotation(q, phi_max).unwrap();
            assert!(quat_angle(c) < phi_max);
            assert!((quat_norm(c) - 1.0).abs() < 1e-12);
            let g = [q[1], q[2], q[3]];
            let n = quat_norm([0.0, g[0], g[1], g[2]]);
            let a = g.map(|x| x / n);
            let b = [c[1], c[2], c[3]];
            let cross = [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ];
            assert!(cross.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn clamp_is_idempotent_for_small_angles() {
        let mut r = rng(42);
        for _ in 0..100 {
            let axis = random_unit(&mut r);
            let axis = quat_normalize([0.0, axis[1], axis[2], axis[3]]).unwrap();
            let q =
                quat_from_axis_angle([axis[1], axis[2], axis[3]], r.gen_range(0.0..0.01 * 0.35));
            let once = clamp_rotation(q, 0.35).unwrap();
            let twice = clamp_rotation(once, 0.35).unwrap();
            for k in 0..4 {
                assert!((once[k] - twice[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn apply_rotation_examples() {
        let mut r = rng(43);
        for _ in 0..100 {
            let (a, b) = (random_unit(&mut r), random_unit(&mut r));
            assert_eq!(
                apply_rotation(a, IDENTITY_QUAT).unwrap(),
                quat_normalize(a).unwrap()
            );
            let id = apply_rotation(IDENTITY_QUAT, b).unwrap();
            assert!((0..4).all(|k| (id[k] - b[k]).abs() < 1e-15));
            let c = apply_rotation(a, b).unwrap();
            assert!((quat_norm(c) - 1.0).abs() < 1e-6);
            let want = mat3_mul(&quat_to_rotmat(a), &quat_to_rotmat(b));
            let got = quat_to_rotmat(c);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((got[i][j] - want[i][j]).abs() < 1e-10);
                }
            }
        }
        assert!(apply_rotation([2.0, 0.0, 0.0, 0.0], IDENTITY_QUAT).is_err());
    }

    #[test]
    fn clamp_graph_gradient_matches_fd() {
        let mut r = rng(44);
        let x0 = random_tensor(&mut r, &[6, 4], -1.0, 1.0);
        let weights = random_tensor(&mut r, &[6, 4], -1.0, 1.0);
        let eval = |x: &Tensor| {
            let tape = Tape::new();
            let v = tape.leaf(x.clone());
            let c = clamp_rotation_graph(v, 0.35).unwrap();
            let l = c
                .mul(tape.constant(weights.clone()))
                .unwrap()
                .sum()
                .unwrap();
            (
                tape.grad(l, &[v]).unwrap().values().remove(0),
                l.item().unwrap(),
            )
        };
        let got = eval(&x0).0;
        let want = fd_grad(&mut |x| eval(x).1, &x0, 1e-6);
        assert_close(&got, &want, 1e-5, 1e-8);
    }

    #[test]
    fn clamp_graph_near_identity_uses_limit() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::new(&[1, 4], vec![2.0, 0.0, 0.0, 0.0]).unwrap());
        let c = clamp_rotation_graph(v, 0.35).unwrap();
        let l = c.slice_cols(1, 2).unwrap().sum().unwrap();
        let g = tape.grad(l, &[v]).unwrap().values().remove(0);
        assert_eq!(g.data(), &[0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn graph_rotation_matches_scalar() {
        let mut r = rng(45);
        let qa: Vec<Quat> = (0..5).map(|_| random_unit(&mut r)).collect();
        let qb: Vec<Quat> = (0..5).map(|_| random_unit(&mut r)).collect();
        let tape = Tape::new();
        let flat = |qs: &[Quat]| Tensor::new(&[qs.len(), 4], qs.concat()).unwrap();
        let out = apply_rotation_graph(tape.leaf(flat(&qa)), tape.leaf(flat(&qb)))
            .unwrap()
            .value();
        for i in 0..5 {
            let want = apply_rotation(qa[i], qb[i]).unwrap();
            for k in 0..4 {
                assert!((out.data()[4 * i + k] - want[k]).abs() < 1e-14);
            }
        }
    }
}
