use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::gauss::{
    read_ply, read_vertex_table, sigmoid, write_ply, write_vertex_table, GaussianPrimitive, Scene,
    VertexTable,
};
use crate::render::{psnr, rasterize, Camera, ImageBuffer, RasterConfig};

use super::StreamError;

/// Additive offsets for every stored attribute of one primitive.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrimitiveDelta {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    pub rot: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub mu_eq: [f64; 3],
    pub t_eq_pos: f64,
    pub t_eq_scale: f64,
}

impl PrimitiveDelta {
    pub fn apply(&self, p: &GaussianPrimitive) -> GaussianPrimitive {
        let add3 = |a: [f64; 3], b: [f64; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        GaussianPrimitive {
            mu: add3(p.mu, self.mu),
            log_scale: add3(p.log_scale, self.log_scale),
            rot: [0, 1, 2, 3].map(|k| p.rot[k] + self.rot[k]),
            opacity_logit: p.opacity_logit + self.opacity_logit,
            color: add3(p.color, self.color),
            mu_eq: add3(p.mu_eq, self.mu_eq),
            t_eq_pos: p.t_eq_pos + self.t_eq_pos,
            t_eq_scale: p.t_eq_scale + self.t_eq_scale,
        }
    }
}

/// One refinement layer: offsets for the first `offsets.len()` primitives of
/// the scene below it, then new primitives appended at the end.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Residual {
    pub offsets: Vec<PrimitiveDelta>,
    pub appended: Vec<GaussianPrimitive>,
}

/// A base scene plus ordered residual layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredScene {
    pub base: Scene,
    pub residuals: Vec<Residual>,
    /// Opacity threshold per level, `residuals.len() + 1` entries.
    pub thresholds: Vec<f64>,
}

impl LayeredScene {
    pub fn new(base: Scene) -> Self {
        Self {
            base,
            residuals: Vec::new(),
            thresholds: vec![0.0],
        }
    }

    pub fn push(&mut self, residual: Residual, threshold: f64) {
        self.residuals.push(residual);
        self.thresholds.push(threshold);
    }

    /// Number of residual layers.
    pub fn depth(&self) -> usize {
        self.residuals.len()
    }

    /// `G_i = G₀ + ΔG₁ + … + ΔG_i`.
    pub fn compose(&self, i: usize) -> Result<Scene, StreamError> {
        if i > self.residuals.len() {
            return Err(StreamError::LevelOutOfRange {
                level: i,
                max: self.residuals.len(),
            });
        }
        let mut scene = self.base.clone();
        for (j, r) in self.residuals[..i].iter().enumerate() {
            if r.offsets.len() > scene.len() {
                return Err(StreamError::ResidualMismatch {
                    layer: j + 1,
                    offsets: r.offsets.len(),
                    primitives: scene.len(),
                });
            }
            for (p, d) in scene.primitives.iter_mut().zip(&r.offsets) {
                *p = d.apply(p);
            }
            scene.primitives.extend(r.appended.iter().cloned());
        }
        Ok(scene)
    }

    /// [`LayeredScene::compose`] followed by that level's opacity threshold.
    pub fn level(&self, i: usize) -> Result<Scene, StreamError> {
        let scene = self.compose(i)?;
        Ok(opacity_prune(
            &scene,
            self.thresholds.get(i).copied().unwrap_or(0.0),
        ))
    }

    fn base_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ply(&mut buf, &self.base).expect("in-memory write");
        buf
    }

    /// Serialized size of each layer file, base first.
    pub fn layer_bytes(&self) -> Vec<usize> {
        let mut out = vec![self.base_bytes().len()];
        out.extend(self.residuals.iter().map(|r| residual_bytes(r).len()));
        out
    }

    /// Writes `base.ply`, `residual_NN.ply` and `manifest.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StreamError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("base.ply"), self.base_bytes())?;
        let mut manifest = format!("layers {}\n", self.residuals.len());
        let _ = writeln!(manifest, "base.ply {:?}", self.thresholds[0]);
        for (j, r) in self.residuals.iter().enumerate() {
            let name = format!("residual_{:02}.ply", j + 1);
            fs::write(dir.join(&name), residual_bytes(r))?;
            let _ = writeln!(manifest, "{name} {:?}", self.thresholds[j + 1]);
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StreamError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: &str| StreamError::Manifest {
            line: line + 1,
            message: msg.to_string(),
        };
        let (ln, head) = lines.next().ok_or_else(|| bad(0, "empty manifest"))?;
        let n: usize = head
            .strip_prefix("layers ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(ln, "expected `layers N`"))?;
        let mut entries = Vec::new();
        for (ln, line) in lines {
            let mut parts = line.split_whitespace();
            let (Some(file), Some(thr), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(ln, "expected `file threshold`"));
            };
            let thr: f64 = thr.parse().map_err(|_| bad(ln, "bad threshold"))?;
            entries.push((file.to_string(), thr));
        }
        if entries.len() != n + 1 {
            return Err(bad(
                ln,
                &format!(
                    "declared {n} residuals, listed {}",
                    entries.len().saturating_sub(1)
                ),
            ));
        }
        let base = read_ply(&fs::read(dir.join(&entries[0].0))?)?;
        let mut layered = LayeredScene::new(base);
        layered.thresholds[0] = entries[0].1;
        for (file, thr) in &entries[1..] {
            let r = residual_from_table(&read_vertex_table(&fs::read(dir.join(file))?)?)?;
            layered.push(r, *thr);
        }
        Ok(layered)
    }
}

const RESIDUAL_PROPERTIES: [&str; 20] = [
    "kind",
    "x",
    "y",
    "z",
    "red",
    "green",
    "blue",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "eq_x",
    "eq_y",
    "eq_z",
    "eq_t_pos",
    "eq_t_scale",
];

fn delta_row(kind: f64, d: &PrimitiveDelta) -> Vec<f64> {
    let mut row = vec![kind];
    row.extend(d.mu);
    row.extend(d.color);
    row.push(d.opacity_logit);
    row.extend(d.log_scale);
    row.extend(d.rot);
    row.extend(d.mu_eq);
    row.push(d.t_eq_pos);
    row.push(d.t_eq_scale);
    row
}

/// Raw attributes of a new primitive, in delta layout.
fn absolute(p: &GaussianPrimitive) -> PrimitiveDelta {
    PrimitiveDelta {
        mu: p.mu,
        log_scale: p.log_scale,
        rot: p.rot,
        opacity_logit: p.opacity_logit,
        color: p.color,
        mu_eq: p.mu_eq,
        t_eq_pos: p.t_eq_pos,
        t_eq_scale: p.t_eq_scale,
    }
}

fn residual_bytes(r: &Residual) -> Vec<u8> {
    let mut rows: Vec<Vec<f64>> = r.offsets.iter().map(|d| delta_row(0.0, d)).collect();
    rows.extend(r.appended.iter().map(|p| delta_row(1.0, &absolute(p))));
    let table = VertexTable {
        names: RESIDUAL_PROPERTIES.iter().map(|s| s.to_string()).collect(),
        rows,
        comments: vec!["residual layer: kind 0 = offset, kind 1 = new primitive".into()],
    };
    let mut buf = Vec::new();
    write_vertex_table(&mut buf, &table).expect("in-memory write");
    buf
}

fn residual_from_table(t: &VertexTable) -> Result<Residual, StreamError> {
    let cols: Vec<usize> = RESIDUAL_PROPERTIES
        .iter()
        .map(|n| {
            t.column(n)
                .ok_or_else(|| StreamError::MissingProperty(n.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut r = Residual::default();
    for row in &t.rows {
        let v = |i: usize| row[cols[i]];
        let d = PrimitiveDelta {
            mu: [v(1), v(2), v(3)],
            color: [v(4), v(5), v(6)],
            opacity_logit: v(7),
            log_scale: [v(8), v(9), v(10)],
            rot: [v(11), v(12), v(13), v(14)],
            mu_eq: [v(15), v(16), v(17)],
            t_eq_pos: v(18),
            t_eq_scale: v(19),
        };
        if v(0) == 0.0 {
            if !r.appended.is_empty() {
                return Err(StreamError::MissingProperty(
                    "offsets must precede new primitives".into(),
                ));
            }
            r.offsets.push(d);
        } else {
            r.appended.push(GaussianPrimitive {
                mu: d.mu,
                log_scale: d.log_scale,
                rot: d.rot,
                opacity_logit: d.opacity_logit,
                color: d.color,
                mu_eq: d.mu_eq,
                t_eq_pos: d.t_eq_pos,
                t_eq_scale: d.t_eq_scale,
            });
        }
    }
    Ok(r)
}

/// Keeps primitives whose opacity is at least `threshold`, in order.
pub fn opacity_prune(scene: &Scene, threshold: f64) -> Scene {
    Scene::new(
        scene
            .primitives
            .iter()
            .filter(|p| sigmoid(p.opacity_logit) >= threshold)
            .cloned()
            .collect(),
        scene.bounds,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub level: usize,
    pub count: usize,
    /// Cumulative bytes of every layer file up to this level.
    pub bytes: usize,
    /// Mean over views.
    pub psnr: f64,
}

/// Renders every level against the reference views.
pub fn rate_quality_sweep(
    layered: &LayeredScene,
    views: &[(Camera, ImageBuffer)],
    background: [f64; 3],
    raster: &RasterConfig,
) -> Result<Vec<SweepRow>, StreamError> {
    let sizes = layered.layer_bytes();
    let mut rows = Vec::new();
    let mut bytes = 0;
    for (i, size) in sizes.iter().enumerate() {
        bytes += size;
        let scene = layered.level(i)?;
        let mut total = 0.0;
        for (cam, gt) in views {
            let (img, _) = rasterize(&scene, cam, background, raster)?;
            total += psnr(&img, gt)?;
        }
        rows.push(SweepRow {
            level: i,
            count: scene.len(),
            bytes,
            psnr: if views.is_empty() {
                f64::NAN
            } else {
                total / views.len() as f64
            },
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("level,count,bytes,psnr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.level,
            r.count,
            r.bytes,
            crate::render::format_psnr(r.psnr)
        );
    }
    out
}
