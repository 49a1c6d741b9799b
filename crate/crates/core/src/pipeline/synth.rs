//! Procedural dynamic scenes rendered with this crate's own rasterizer.
//!
//! Every moving primitive belongs to a rigid group whose pose has a closed
//! form in time, so ground-truth trajectories are exact. The canonical scene
//! is the configuration at `t = 0.5`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gauss::{
    logit, quat_from_axis_angle, quat_mul, quat_normalize, save_ply, Aabb, GaussianPrimitive,
    Scene, Vec3, IDENTITY_QUAT,
};
use crate::render::{rasterize, Camera, RasterConfig};

use super::{Frame, FrameDataset, PipelineError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// A rigid cluster swinging about a pivot.
    Pendulum,
    /// Two clusters on a shared circular orbit.
    Orbit,
    /// A static block plus a pendulum.
    Mixed,
    /// Nothing moves.
    Static,
}

impl FromStr for SceneKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "orbit" => Ok(Self::Orbit),
            "mixed" => Ok(Self::Mixed),
            "static" => Ok(Self::Static),
            _ => Err(PipelineError::Config(format!("unknown scene kind `{s}`"))),
        }
    }
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pendulum => "pendulum",
            Self::Orbit => "orbit",
            Self::Mixed => "mixed",
            Self::Static => "static",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub kind: SceneKind,
    pub frames: usize,
    pub gaussians: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    pub seed: u64,
    /// Total camera azimuth sweep over the sequence, in degrees.
    pub camera_sweep_deg: f64,
    pub background: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::Mixed,
            frames: 20,
            gaussians: 300,
            resolution: 64,
            seed: 0,
            camera_sweep_deg: 20.0,
            background: [1.0; 3],
        }
    }
}

pub const PENDULUM_PIVOT: Vec3 = [0.0, 0.95, 0.0];
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_AMPLITUDE: f64 = 0.45;
pub const PENDULUM_OMEGA: f64 = 2.0 * PI * 0.8;
const ORBIT_RADIUS: f64 = 0.55;
const ORBIT_OMEGA: f64 = 2.0 * PI * 0.5;
const CAMERA_DISTANCE: f64 = 4.0;
const FOCAL_FACTOR: f64 = 1.2;

/// Pendulum angle and angular velocity, small-angle (harmonic) regime.
pub fn pendulum_state(t: f64) -> (f64, f64) {
    let tau = t - 0.5;
    (
        PENDULUM_AMPLITUDE * (PENDULUM_OMEGA * tau).sin(),
        PENDULUM_AMPLITUDE * PENDULUM_OMEGA * (PENDULUM_OMEGA * tau).cos(),
    )
}

/// `H = ½θ̇² + ½ω²θ²` per unit moment of inertia.
pub fn pendulum_energy(theta: f64, theta_dot: f64) -> f64 {
    0.5 * theta_dot * theta_dot + 0.5 * PENDULUM_OMEGA * PENDULUM_OMEGA * theta * theta
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Group {
    Static,
    Pendulum,
    Orbit,
}

/// Rotation about `pivot` by `angle` around +z, relative to the canonical pose.
fn group_pose(g: Group, t: f64) -> (Vec3, f64) {
    match g {
        Group::Static => ([0.0; 3], 0.0),
        Group::Pendulum => (PENDULUM_PIVOT, pendulum_state(t).0),
        Group::Orbit => ([0.0; 3], ORBIT_OMEGA * (t - 0.5)),
    }
}

fn rotate_z(p: Vec3, pivot: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let (x, y) = (p[0] - pivot[0], p[1] - pivot[1]);
    [pivot[0] + c * x - s * y, pivot[1] + s * x + c * y, p[2]]
}

/// Ground truth: canonical primitives, their groups and the cameras.
pub struct SynthScene {
    pub config: SynthConfig,
    pub canonical: Scene,
    groups: Vec<Group>,
}

impl SynthScene {
    /// Primitives that never move come first; this many of them.
    pub fn static_count(&self) -> usize {
        self.groups
            .iter()
            .take_while(|g| **g == Group::Static)
            .count()
    }

    pub fn is_static(&self, i: usize) -> bool {
        self.groups[i] == Group::Static
    }

    pub fn timestamps(&self) -> Vec<f64> {
        let n = self.config.frames;
        (0..n)
            .map(|i| {
                if n > 1 {
                    i as f64 / (n - 1) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn camera(&self, t: f64) -> Camera {
        let az = self.config.camera_sweep_deg.to_radians() * (t - 0.5);
        let eye = [CAMERA_DISTANCE * az.sin(), 0.0, -CAMERA_DISTANCE * az.cos()];
        let r = self.config.resolution;
        Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], FOCAL_FACTOR, r, r)
    }

    /// The scene at time `t`.
    pub fn at(&self, t: f64) -> Scene {
        let prims = self
            .canonical
            .primitives
            .iter()
            .zip(&self.groups)
            .map(|(p, &g)| {
                let (pivot, angle) = group_pose(g, t);
                let mut q = p.clone();
                if angle != 0.0 {
                    q.mu = rotate_z(p.mu, pivot, angle);
                    let turn = quat_from_axis_angle([0.0, 0.0, 1.0], angle);
                    q.rot = quat_normalize(quat_mul(turn, p.rot)).expect("unit");
                }
                q
            })
            .collect();
        Scene::new(prims, self.canonical.bounds)
    }

    pub fn dataset(&self) -> Result<FrameDataset, PipelineError> {
        let raster = RasterConfig::default();
        let frames = self
            .timestamps()
            .into_iter()
            .map(|t| {
                let scene = self.at(t);
                let camera = self.camera(t);
                let (image, _) = rasterize(&scene, &camera, self.config.background, &raster)?;
                Ok(Frame {
                    t,
                    camera,
                    image,
                    trajectory: Some(scene.primitives.iter().map(|p| p.mu).collect()),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        FrameDataset::new(frames)
    }

    /// Writes the dataset, `gt.ply` (canonical), `init.ply` and `synth.txt`.
    pub fn save(&self, dir: impl AsRef<Path>, init_jitter: f64) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        self.dataset()?.save(dir)?;
        save_ply(&self.canonical, dir.join("gt.ply"))?;
        save_ply(
            &self.initial_scene(init_jitter, self.config.seed + 1),
            dir.join("init.ply"),
        )?;
        let c = &self.config;
        let text = format!(
            "kind {}\nframes {}\ngaussians {}\nresolution {}\nseed {}\nstatic {}\n",
            c.kind.name(),
            c.frames,
            c.gaussians,
            c.resolution,
            c.seed,
            self.static_count()
        );
        fs::write(dir.join("synth.txt"), text)?;
        Ok(())
    }

    /// A starting point for training, like a coloured point cloud: jittered
    /// positions and the true colours, with generic shape and opacity.
    pub fn initial_scene(&self, jitter: f64, seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = self
            .canonical
            .primitives
            .iter()
            .map(|p| {
                let mu = p.mu.map(|x| x + jitter * gauss(&mut rng));
                let mut q = GaussianPrimitive::new(mu, [0.08; 3], IDENTITY_QUAT, 0.5, p.color)
                    .expect("valid");
                q.mu_eq = mu;
                q
            })
            .collect();
        Scene::new(prims, self.canonical.bounds)
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn cluster(
    rng: &mut impl Rng,
    n: usize,
    center: Vec3,
    spread: Vec3,
    base_color: Vec3,
) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| {
            let mu = [0, 1, 2].map(|k| center[k] + spread[k] * gauss(rng));
            let scale = [0; 3].map(|_| rng.gen_range(0.06..0.12));
            let axis = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            let rot = if axis.iter().all(|a: &f64| a.abs() < 1e-3) {
                IDENTITY_QUAT
            } else {
                quat_from_axis_angle(axis, rng.gen_range(0.0..PI))
            };
            let color = base_color.map(|c| (c + rng.gen_range(-0.12..0.12)).clamp(0.0, 1.0));
            let mut p = GaussianPrimitive::new(mu, scale, rot, 0.5, color).expect("valid");
            p.opacity_logit = logit(rng.gen_range(0.75..0.95));
            p
        })
        .collect()
}

/// Builds the ground truth for `cfg`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene, PipelineError> {
    if cfg.frames == 0 || cfg.gaussians == 0 || cfg.resolution == 0 {
        return Err(PipelineError::Config(
            "frames, gaussians and resolution must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.gaussians;
    let bob = [PENDULUM_PIVOT[0], PENDULUM_PIVOT[1] - PENDULUM_LENGTH, 0.0];
    let (prims, groups) = match cfg.kind {
        SceneKind::Pendulum => (
            cluster(&mut rng, n, bob, [0.14, 0.14, 0.1], [0.85, 0.3, 0.2]),
            vec![Group::Pendulum; n],
        ),
        SceneKind::Orbit => {
            let a = n / 2;
            let mut p = cluster(
                &mut rng,
                a,
                [ORBIT_RADIUS, 0.0, 0.0],
                [0.12, 0.12, 0.1],
                [0.2, 0.4, 0.9],
            );
            p.extend(cluster(
                &mut rng,
                n - a,
                [-ORBIT_RADIUS, 0.0, 0.0],
                [0.12, 0.12, 0.1],
                [0.9, 0.7, 0.1],
            ));
            (p, vec![Group::Orbit; n])
        }
        SceneKind::Mixed => {
            let a = n / 2;
            let mut p = cluster(
                &mut rng,
                a,
                [0.0, -0.65, 0.25],
                [0.35, 0.1, 0.12],
                [0.25, 0.6, 0.3],
            );
            p.extend(cluster(
                &mut rng,
                n - a,
                bob,
                [0.12, 0.12, 0.1],
                [0.85, 0.3, 0.2],
            ));
            let mut g = vec![Group::Static; a];
            g.extend(vec![Group::Pendulum; n - a]);
            (p, g)
        }
        SceneKind::Static => (
            cluster(
                &mut rng,
                n,
                [0.0, -0.1, 0.0],
                [0.35, 0.3, 0.15],
                [0.4, 0.5, 0.8],
            ),
            vec![Group::Static; n],
        ),
    };
    let canonical = Scene::new(prims, Aabb::cube(1.2));
    let camera_sweep_deg = if cfg.kind == SceneKind::Static {
        0.0
    } else {
        cfg.camera_sweep_deg
    };
    Ok(SynthScene {
        config: SynthConfig {
            camera_sweep_deg,
            ..cfg.clone()
        },
        canonical,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: SceneKind, frames: usize) -> SynthConfig {
        SynthConfig {
            kind,
            frames,
            gaussians: 20,
            resolution: 16,
            ..Default::default()
        }
    }

    #[test]
    fn single_frame_is_static() {
        let s = synth_scene(&small(SceneKind::Pendulum, 1)).unwrap();
        let ds = s.dataset().unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.frames()[0].t, 0.0);
    }

    #[test]
    fn pendulum_energy_is_constant() {
        let e0 = pendulum_energy(pendulum_state(0.0).0, pendulum_state(0.0).1);
        for i in 0..=100 {
            let (th, om) = pendulum_state(i as f64 / 100.0);
            assert!((pendulum_energy(th, om) - e0).abs() < 1e-10);
        }
        assert!((e0 - 0.5 * (PENDULUM_AMPLITUDE * PENDULUM_OMEGA).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn mixed_static_half_never_moves() {
        let s = synth_scene(&small(SceneKind::Mixed, 6)).unwrap();
        assert_eq!(s.static_count(), 10);
        let ds = s.dataset().unwrap();
        let first = ds.frames()[0].trajectory.clone().unwrap();
        for f in &ds.frames()[1..] {
            let traj = f.trajectory.as_ref().unwrap();
            assert_eq!(&traj[..10], &first[..10]);
            assert_ne!(&traj[10..], &first[10..]);
        }
    }

    #[test]
    fn pendulum_motion_is_rigid() {
        let s = synth_scene(&small(SceneKind::Pendulum, 5)).unwrap();
        let (a, b) = (s.at(0.1), s.at(0.8));
        let d = |p: &Scene, i: usize, j: usize| {
            let (x, y) = (p.primitives[i].mu, p.primitives[j].mu);
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
        };
        for (i, j) in [(0, 1), (3, 7), (2, 19)] {
            assert!((d(&a, i, j) - d(&b, i, j)).abs() < 1e-12);
        }
        assert_eq!(s.at(0.5), s.canonical);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_scene(&small(SceneKind::Orbit, 3))
            .unwrap()
            .dataset()
            .unwrap();
        let b = synth_scene(&small(SceneKind::Orbit, 3))
            .unwrap()
            .dataset()
            .unwrap();
        assert_eq!(a, b);
        assert!("swirl".parse::<SceneKind>().is_err());
    }
}
