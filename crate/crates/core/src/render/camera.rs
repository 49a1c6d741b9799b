use crate::gauss::{Mat3, Vec3};

use super::RenderError;

/// Pinhole camera with an OpenCV-style frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// World-to-camera transform, row-major.
    pub view: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub znear: f64,
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.map(|x| x / n)
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    /// The focal length is `focal_factor · width` pixels and the principal
    /// point sits at the image centre.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal_factor: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let z = normalize(sub(target, eye));
        let x = normalize(cross(z, up));
        let y = cross(z, x);
        let rot = [x, y, z];
        let mut view = [[0.0; 4]; 4];
        for i in 0..3 {
            view[i][..3].copy_from_slice(&rot[i]);
            view[i][3] = -(rot[i][0] * eye[0] + rot[i][1] * eye[1] + rot[i][2] * eye[2]);
        }
        view[3][3] = 1.0;
        let f = focal_factor * width as f64;
        Self {
            view,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            znear: 0.01,
        }
    }

    /// Same pose and field of view at another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn rotation(&self) -> Mat3 {
        [0, 1, 2].map(|i| [self.view[i][0], self.view[i][1], self.view[i][2]])
    }

    pub fn translation(&self) -> Vec3 {
        [self.view[0][3], self.view[1][3], self.view[2][3]]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = self.rotation();
        let t = self.translation();
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }

    /// Camera centre in world coordinates.
    pub fn position(&self) -> Vec3 {
        let r = self.rotation();
        let t = self.translation();
        [0, 1, 2].map(|j| -(r[0][j] * t[0] + r[1][j] * t[1] + r[2][j] * t[2]))
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(RenderError::InvalidCamera(
                        "view rotation is not orthonormal".into(),
                    ));
                }
            }
        }
        if crate::gauss::det3(&r) < 0.0 {
            return Err(RenderError::InvalidCamera(
                "view rotation is a reflection".into(),
            ));
        }
        if self.view[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(RenderError::InvalidCamera(
                "last view row must be 0 0 0 1".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.znear > 0.0) {
            return Err(RenderError::InvalidCamera(
                "focal lengths and znear must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("empty image".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_builds_valid_frame() {
        let cam = Camera::look_at([0.3, 0.2, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 1.6, 64, 48);
        cam.validate().unwrap();
        let c = cam.to_camera([0.0; 3]);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        assert!((c[2] - (0.09 + 0.04 + 16.0f64).sqrt()).abs() < 1e-12);
        let p = cam.position();
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[2] + 4.0).abs() < 1e-12);
        // World up maps to image up, i.e. negative camera y.
        let straight = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 8, 8);
        assert!(straight.to_camera([0.0, 1.0, 0.0])[1] < 0.0);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut cam = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 8, 8);
        cam.view[0][0] = 2.0;
        assert!(cam.validate().is_err());
    }
}
