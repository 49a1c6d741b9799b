//! Gaussian primitives, quaternion/covariance math and scene persistence.

mod ply;
mod quat;

pub use ply::{
    load_ply, read_ply, read_vertex_table, save_ply, write_ply, write_vertex_table, PlyError,
    VertexTable, SCENE_PROPERTIES,
};
pub use quat::{
    covariance, det3, mat3_mul, mat3_transpose, mat3_vec, quat_angle, quat_from_axis_angle,
    quat_mul, quat_norm, quat_normalize, quat_to_rotmat, Mat3, Quat, Vec3, IDENTITY_QUAT,
    UNIT_TOLERANCE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussError {
    #[error("quaternion {0:?} is too close to zero to normalize")]
    DegenerateQuaternion(Quat),
    #[error("quaternion {0:?} is not unit length")]
    NotUnit(Quat),
    #[error("scale must be positive, got {0:?}")]
    NonPositiveScale(Vec3),
    #[error("opacity must lie in (0, 1), got {0}")]
    OpacityOutOfRange(f64),
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Default temporal equilibrium: the middle of normalized time.
pub const DEFAULT_T_EQ: f64 = 0.5;

/// One anisotropic Gaussian with its equilibrium anchors.
///
/// Scale and opacity are stored pre-activation so that `exp` and `sigmoid`
/// keep them positive and inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vec3,
    pub log_scale: Vec3,
    pub rot: Quat,
    pub opacity_logit: f64,
    pub color: Vec3,
    pub mu_eq: Vec3,
    pub t_eq_pos: f64,
    pub t_eq_scale: f64,
}

impl GaussianPrimitive {
    /// A primitive at rest: `mu_eq = mu` and both temporal anchors at 0.5.
    pub fn new(
        mu: Vec3,
        scale: Vec3,
        rot: Quat,
        opacity: f64,
        color: Vec3,
    ) -> Result<Self, GaussError> {
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(GaussError::NonPositiveScale(scale));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(GaussError::OpacityOutOfRange(opacity));
        }
        Ok(Self {
            mu,
            log_scale: scale.map(f64::ln),
            rot: quat_normalize(rot)?,
            opacity_logit: logit(opacity),
            color,
            mu_eq: mu,
            t_eq_pos: DEFAULT_T_EQ,
            t_eq_scale: DEFAULT_T_EQ,
        })
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Result<Mat3, GaussError> {
        covariance(self.scale(), self.rot)
    }
}

/// Axis-aligned box used to map positions into `[0,1]³`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self::new([-half; 3], [half; 3])
    }

    /// Smallest box holding every point, padded by `pad` on each side.
    pub fn around(points: impl IntoIterator<Item = Vec3>, pad: f64) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for p in points {
            any = true;
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if !any {
            return Self::cube(1.0);
        }
        for k in 0..3 {
            min[k] -= pad;
            max[k] += pad;
            if max[k] - min[k] < 1e-9 {
                min[k] -= 0.5;
                max[k] += 0.5;
            }
        }
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        [0, 1, 2].map(|k| self.max[k] - self.min[k])
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Position mapped into `[0,1]³` (not clamped).
    pub fn normalize(&self, p: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| (p[k] - self.min[k]) / (self.max[k] - self.min[k]))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// An ordered set of primitives with the box used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>, bounds: Aabb) -> Self {
        Self { primitives, bounds }
    }

    pub fn empty(bounds: Aabb) -> Self {
        Self::new(Vec::new(), bounds)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// True when every position maps into `[0,1]³`.
    pub fn within_bounds(&self) -> bool {
        self.primitives.iter().all(|p| self.bounds.contains(p.mu))
    }
}
