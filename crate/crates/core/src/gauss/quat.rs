use super::GaussError;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
/// Quaternion in `[w, x, y, z]` order.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

/// Tolerance on `|q| = 1` accepted by routines that require unit input.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_norm(q: Quat) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn quat_normalize(q: Quat) -> Result<Quat, GaussError> {
    let n = quat_norm(q);
    if !(n > 1e-12) {
        return Err(GaussError::DegenerateQuaternion(q));
    }
    Ok(q.map(|v| v / n))
}

/// Rotation about a unit `axis` by `angle` radians.
pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let (s, c) = (angle / 2.0).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Rotation angle in `[0, 2π]`.
pub fn quat_angle(q: Quat) -> f64 {
    let v = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    2.0 * v.atan2(q[0])
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: Quat) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// `Σ = R diag(s)² Rᵀ`.
pub fn covariance(s: Vec3, rot: Quat) -> Result<Mat3, GaussError> {
    let n = quat_norm(rot);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(GaussError::NotUnit(rot));
    }
    let r = quat_to_rotmat(rot);
    let mut sigma = [[0.0; 3]; 3];
    for (i, row) in sigma.iter_mut().enumerate() {
        for (j, out) in row.iter_mut().enumerate() {
            *out = (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum();
        }
    }
    Ok(sigma)
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}
