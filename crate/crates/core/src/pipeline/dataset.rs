use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::gauss::Vec3;
use crate::render::{Camera, ImageBuffer};

use super::PipelineError;

const DEFAULT_ZNEAR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub camera: Camera,
    pub image: ImageBuffer,
    /// Ground-truth primitive positions at `t`, when known.
    pub trajectory: Option<Vec<Vec3>>,
}

/// Frames with strictly increasing timestamps in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    frames: Vec<Frame>,
}

impl FrameDataset {
    pub fn new(frames: Vec<Frame>) -> Result<Self, PipelineError> {
        for f in &frames {
            if !(0.0..=1.0).contains(&f.t) {
                return Err(PipelineError::Dataset(format!(
                    "timestamp {} outside [0, 1]",
                    f.t
                )));
            }
            f.camera.validate()?;
            if (f.image.width, f.image.height) != (f.camera.width, f.camera.height) {
                return Err(PipelineError::Dataset(format!(
                    "image {}x{} does not match camera {}x{}",
                    f.image.width, f.image.height, f.camera.width, f.camera.height
                )));
            }
        }
        if let Some(w) = frames.windows(2).find(|w| !(w[0].t < w[1].t)) {
            return Err(PipelineError::Dataset(format!(
                "timestamps must increase strictly: {} then {}",
                w[0].t, w[1].t
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `frames/NNNN.{ppm,cam,traj}` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let frames_dir = dir.as_ref().join("frames");
        fs::create_dir_all(&frames_dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            let stem = frames_dir.join(format!("{i:04}"));
            f.image.save_ppm(stem.with_extension("ppm"))?;
            fs::write(stem.with_extension("cam"), camera_text(&f.camera, f.t))?;
            if let Some(traj) = &f.trajectory {
                let mut s = String::new();
                for p in traj {
                    let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
                }
                fs::write(stem.with_extension("traj"), s)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let frames_dir = dir.as_ref().join("frames");
        let mut stems: Vec<String> = fs::read_dir(&frames_dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".cam").map(|s| s.to_string())
            })
            .collect();
        stems.sort();
        let mut frames = Vec::with_capacity(stems.len());
        for stem in stems {
            let base = frames_dir.join(&stem);
            let (camera, t) = parse_camera(&fs::read_to_string(base.with_extension("cam"))?)
                .map_err(|m| PipelineError::Dataset(format!("{stem}.cam: {m}")))?;
            let image = ImageBuffer::load_ppm(base.with_extension("ppm"))?;
            let traj_path = base.with_extension("traj");
            let trajectory = if traj_path.exists() {
                Some(
                    parse_trajectory(&fs::read_to_string(traj_path)?)
                        .map_err(|m| PipelineError::Dataset(format!("{stem}.traj: {m}")))?,
                )
            } else {
                None
            };
            frames.push(Frame {
                t,
                camera,
                image,
                trajectory,
            });
        }
        Self::new(frames)
    }
}

/// View rows, then `fx fy cx cy`, `width height` and the timestamp.
pub fn camera_text(cam: &Camera, t: f64) -> String {
    let mut s = String::new();
    for row in &cam.view {
        let _ = writeln!(s, "{:?} {:?} {:?} {:?}", row[0], row[1], row[2], row[3]);
    }
    let _ = writeln!(s, "{:?} {:?} {:?} {:?}", cam.fx, cam.fy, cam.cx, cam.cy);
    let _ = writeln!(s, "{} {}", cam.width, cam.height);
    let _ = writeln!(s, "{t:?}");
    s
}

pub fn parse_camera(text: &str) -> Result<(Camera, f64), String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 23 {
        return Err(format!("expected 23 numbers, found {}", tokens.len()));
    }
    let num = |i: usize| {
        tokens[i]
            .parse::<f64>()
            .map_err(|_| format!("bad number `{}`", tokens[i]))
    };
    let int = |i: usize| {
        tokens[i]
            .parse::<usize>()
            .map_err(|_| format!("bad size `{}`", tokens[i]))
    };
    let mut view = [[0.0; 4]; 4];
    for (r, row) in view.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = num(4 * r + c)?;
        }
    }
    let cam = Camera {
        view,
        fx: num(16)?,
        fy: num(17)?,
        cx: num(18)?,
        cy: num(19)?,
        width: int(20)?,
        height: int(21)?,
        znear: DEFAULT_ZNEAR,
    };
    cam.validate().map_err(|e| e.to_string())?;
    Ok((cam, num(22)?))
}

fn parse_trajectory(text: &str) -> Result<Vec<Vec3>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|w| w.parse().map_err(|_| format!("bad number `{w}`")))
                .collect::<Result<_, _>>()?;
            match v.as_slice() {
                [x, y, z] => Ok([*x, *y, *z]),
                _ => Err(format!("expected 3 numbers per line, got `{l}`")),
            }
        })
        .collect()
}
