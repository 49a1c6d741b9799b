//! EWA splatting with front-to-back alpha compositing.
//!
//! The forward pass is a plain per-pixel loop over depth-sorted primitives.
//! The backward pass recomputes the per-pixel transmittances and walks each
//! list back to front, carrying the colour `S` seen behind the current
//! primitive so that `∂C/∂αᵢ = Tᵢ (cᵢ − Sᵢ)` needs no division.

use std::rc::Rc;

use crate::autodiff::{AutodiffError, CustomOp, Tape, Tensor, Var};
use crate::gauss::{quat_to_rotmat, sigmoid, GaussianPrimitive, Mat3, Quat, Scene, Vec3};

use super::{Camera, ImageBuffer, RenderError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    /// Added to the screen-space covariance diagonal, in px².
    pub dilation: f64,
    /// Footprint half-width in standard deviations.
    pub cutoff_sigma: f64,
    /// Screen covariances with a larger condition number are skipped.
    pub max_condition: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            dilation: 0.3,
            cutoff_sigma: 3.0,
            max_condition: 1e12,
        }
    }
}

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub mean: [f64; 2],
    /// `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub cov: [f64; 3],
    pub depth: f64,
}

/// Counters from one rasterization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterStats {
    pub behind_camera: usize,
    pub singular: usize,
    pub offscreen: usize,
    pub drawn: usize,
    /// Pixel/primitive pairs composited.
    pub fragments: usize,
}

enum Cull {
    Behind,
    Singular,
    Offscreen,
}

/// Everything the backward pass needs about one visible primitive.
struct Geom {
    t: Vec3,
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Vec3,
    depth: f64,
    bbox: [usize; 4],
    jw: [[f64; 3]; 2],
    sigma: Mat3,
    rmat: Mat3,
    scale: Vec3,
    qhat: Quat,
    qnorm: f64,
}

fn row3(d: &[f64], i: usize) -> Vec3 {
    [d[3 * i], d[3 * i + 1], d[3 * i + 2]]
}

struct Attrs<'a> {
    mu: &'a [f64],
    log_scale: &'a [f64],
    rot: &'a [f64],
    opacity_logit: &'a [f64],
    color: &'a [f64],
}

impl Attrs<'_> {
    fn len(&self) -> usize {
        self.mu.len() / 3
    }
}

fn prepare(a: &Attrs, i: usize, cam: &Camera, cfg: &RasterConfig) -> Result<Geom, Cull> {
    let mu = row3(a.mu, i);
    let w = cam.rotation();
    let t = cam.to_camera(mu);
    if t[2] <= cam.znear {
        return Err(Cull::Behind);
    }
    let q = [
        a.rot[4 * i],
        a.rot[4 * i + 1],
        a.rot[4 * i + 2],
        a.rot[4 * i + 3],
    ];
    let qnorm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(qnorm > 1e-12) {
        return Err(Cull::Singular);
    }
    let qhat = q.map(|v| v / qnorm);
    let rmat = quat_to_rotmat(qhat);
    let scale = row3(a.log_scale, i).map(f64::exp);
    let mut sigma = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            sigma[r][c] = (0..3)
                .map(|k| rmat[r][k] * scale[k] * scale[k] * rmat[c][k])
                .sum();
        }
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let j = [
        [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
        [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let mut jw = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let mut cov = [0.0; 3];
    for (slot, (r, c)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        cov[slot] = (0..3)
            .map(|k| {
                (0..3)
                    .map(|l| jw[r][k] * sigma[k][l] * jw[c][l])
                    .sum::<f64>()
            })
            .sum();
    }
    cov[0] += cfg.dilation;
    cov[2] += cfg.dilation;
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let mid = 0.5 * (cov[0] + cov[2]);
    let disc = (mid * mid - det).max(0.0).sqrt();
    let (l1, l2) = (mid + disc, mid - disc);
    if !(det > 0.0 && l2 > 0.0) || l1 / l2 > cfg.max_condition {
        return Err(Cull::Singular);
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy];
    let radius = cfg.cutoff_sigma * l1.sqrt();
    // Pixels whose centre (x + 0.5) lies within the radius box.
    let lo = |m: f64| (m - radius - 0.5).ceil().max(0.0);
    let hi = |m: f64, n: usize| ((m + radius - 0.5).floor() + 1.0).min(n as f64);
    let (x0, x1) = (lo(mean[0]), hi(mean[0], cam.width));
    let (y0, y1) = (lo(mean[1]), hi(mean[1], cam.height));
    if !(x0 < x1 && y0 < y1) {
        return Err(Cull::Offscreen);
    }
    Ok(Geom {
        t,
        mean,
        conic,
        opacity: sigmoid(a.opacity_logit[i]),
        color: row3(a.color, i),
        depth: tz,
        bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
        jw,
        sigma,
        rmat,
        scale,
        qhat,
        qnorm,
    })
}

/// Visible primitives in compositing order, and per-pixel lists into them.
struct Layout {
    geoms: Vec<(usize, Geom)>,
    bins: Vec<Vec<u32>>,
    stats: RasterStats,
}

fn layout(a: &Attrs, cam: &Camera, cfg: &RasterConfig) -> Layout {
    let mut stats = RasterStats::default();
    let mut geoms = Vec::new();
    for i in 0..a.len() {
        match prepare(a, i, cam, cfg) {
            Ok(g) => geoms.push((i, g)),
            Err(Cull::Behind) => stats.behind_camera += 1,
            Err(Cull::Singular) => stats.singular += 1,
            Err(Cull::Offscreen) => stats.offscreen += 1,
        }
    }
    // Stable: equal depths keep index order.
    geoms.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth));
    let mut bins = vec![Vec::new(); cam.width * cam.height];
    for (k, (_, g)) in geoms.iter().enumerate() {
        let [x0, x1, y0, y1] = g.bbox;
        for y in y0..y1 {
            for x in x0..x1 {
                bins[y * cam.width + x].push(k as u32);
            }
        }
        stats.fragments += (x1 - x0) * (y1 - y0);
    }
    stats.drawn = geoms.len();
    Layout { geoms, bins, stats }
}

/// `exp(−½ dᵀ K d)` and the offset `d` at pixel `(x, y)`.
fn footprint(g: &Geom, x: usize, y: usize) -> (f64, f64, f64) {
    let dx = x as f64 + 0.5 - g.mean[0];
    let dy = y as f64 + 0.5 - g.mean[1];
    let [a, b, c] = g.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    (power.exp(), dx, dy)
}

fn composite(a: &Attrs, cam: &Camera, bg: Vec3, cfg: &RasterConfig) -> (Vec<f64>, RasterStats) {
    let lay = layout(a, cam, cfg);
    let mut out = vec![0.0; cam.width * cam.height * 3];
    for (p, bin) in lay.bins.iter().enumerate() {
        let (x, y) = (p % cam.width, p / cam.width);
        let mut trans = 1.0;
        let mut acc = [0.0; 3];
        for &k in bin {
            let g = &lay.geoms[k as usize].1;
            let alpha = g.opacity * footprint(g, x, y).0;
            for ch in 0..3 {
                acc[ch] += trans * alpha * g.color[ch];
            }
            trans *= 1.0 - alpha;
        }
        for ch in 0..3 {
            out[3 * p + ch] = acc[ch] + trans * bg[ch];
        }
    }
    (out, lay.stats)
}

/// Primitive attributes as `[n, k]` tensors, the layout the rasterizer consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatTensors {
    pub mu: Tensor,
    pub log_scale: Tensor,
    pub rot: Tensor,
    pub opacity_logit: Tensor,
    pub color: Tensor,
}

impl SplatTensors {
    pub fn from_primitives(prims: &[GaussianPrimitive]) -> Self {
        let n = prims.len();
        let mut cols: [Vec<f64>; 5] = Default::default();
        for p in prims {
            cols[0].extend(p.mu);
            cols[1].extend(p.log_scale);
            cols[2].extend(p.rot);
            cols[3].push(p.opacity_logit);
            cols[4].extend(p.color);
        }
        let [a, b, c, d, e] = cols;
        let t = |k: usize, v: Vec<f64>| Tensor::new(&[n, k], v).expect("row layout");
        Self {
            mu: t(3, a),
            log_scale: t(3, b),
            rot: t(4, c),
            opacity_logit: t(1, d),
            color: t(3, e),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [&Tensor; 5] {
        [
            &self.mu,
            &self.log_scale,
            &self.rot,
            &self.opacity_logit,
            &self.color,
        ]
    }

    pub fn from_array([mu, log_scale, rot, opacity_logit, color]: [Tensor; 5]) -> Self {
        Self {
            mu,
            log_scale,
            rot,
            opacity_logit,
            color,
        }
    }

    /// Copies the rendered attributes back, leaving equilibrium fields alone.
    pub fn write_to(&self, prims: &mut [GaussianPrimitive]) {
        let row = |t: &Tensor, i: usize, k: usize| t.data()[i * k..(i + 1) * k].to_vec();
        for (i, p) in prims.iter_mut().enumerate() {
            p.mu.copy_from_slice(&row(&self.mu, i, 3));
            p.log_scale.copy_from_slice(&row(&self.log_scale, i, 3));
            p.rot.copy_from_slice(&row(&self.rot, i, 4));
            p.opacity_logit = self.opacity_logit.data()[i];
            p.color.copy_from_slice(&row(&self.color, i, 3));
        }
    }

    /// Places every attribute on `tape`, as leaves or as constants.
    pub fn to_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> SplatVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        SplatVars {
            mu: put(&self.mu),
            log_scale: put(&self.log_scale),
            rot: put(&self.rot),
            opacity_logit: put(&self.opacity_logit),
            color: put(&self.color),
        }
    }

    fn attrs(&self) -> Attrs<'_> {
        Attrs {
            mu: self.mu.data(),
            log_scale: self.log_scale.data(),
            rot: self.rot.data(),
            opacity_logit: self.opacity_logit.data(),
            color: self.color.data(),
        }
    }
}

impl SplatVars<'_> {
    pub fn as_array(&self) -> [Var<'_>; 5] {
        [
            self.mu,
            self.log_scale,
            self.rot,
            self.opacity_logit,
            self.color,
        ]
    }
}

/// Screen-space mean, covariance and depth; `None` when culled.
pub fn project(p: &GaussianPrimitive, cam: &Camera, cfg: &RasterConfig) -> Option<Projected> {
    let t = SplatTensors::from_primitives(std::slice::from_ref(p));
    let attrs = t.attrs();
    // Off-screen primitives still have a projection.
    let wide = RasterConfig {
        cutoff_sigma: f64::INFINITY,
        ..*cfg
    };
    let g = prepare(&attrs, 0, cam, &wide).ok()?;
    let [a, b, c] = g.conic;
    let det = a * c - b * b;
    Some(Projected {
        mean: g.mean,
        cov: [c / det, -b / det, a / det],
        depth: g.depth,
    })
}

/// Renders a scene into an image.
pub fn rasterize(
    scene: &Scene,
    cam: &Camera,
    background: Vec3,
    cfg: &RasterConfig,
) -> Result<(ImageBuffer, RasterStats), RenderError> {
    let t = SplatTensors::from_primitives(&scene.primitives);
    let attrs = t.attrs();
    let (data, stats) = composite(&attrs, cam, background, cfg);
    let img = ImageBuffer::from_tensor(
        cam.width,
        cam.height,
        &Tensor::new(&[cam.width * cam.height, 3], data)?,
    )?;
    Ok((img, stats))
}

/// Attributes of a batch of primitives on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SplatVars<'t> {
    pub mu: Var<'t>,
    pub log_scale: Var<'t>,
    pub rot: Var<'t>,
    pub opacity_logit: Var<'t>,
    pub color: Var<'t>,
}

struct RasterOp {
    cam: Camera,
    background: Vec3,
    cfg: RasterConfig,
}

/// Differentiable render, `[h·w, 3]`, row-major pixels.
pub fn rasterize_graph<'t>(
    s: SplatVars<'t>,
    cam: &Camera,
    background: Vec3,
    cfg: &RasterConfig,
) -> Result<(Var<'t>, RasterStats), AutodiffError> {
    let vals = [s.mu, s.log_scale, s.rot, s.opacity_logit, s.color].map(|v| v.value());
    let n = vals[0].shape().first().copied().unwrap_or(0);
    for (v, k) in vals.iter().zip([3, 3, 4, 1, 3]) {
        if v.shape() != [n, k] {
            return Err(AutodiffError::ShapeMismatch {
                op: "rasterize",
                lhs: vec![n, k],
                rhs: v.shape().to_vec(),
            });
        }
    }
    let attrs = Attrs {
        mu: vals[0].data(),
        log_scale: vals[1].data(),
        rot: vals[2].data(),
        opacity_logit: vals[3].data(),
        color: vals[4].data(),
    };
    let (data, stats) = composite(&attrs, cam, background, cfg);
    let out = Tensor::new(&[cam.width * cam.height, 3], data)?;
    let op = RasterOp {
        cam: cam.clone(),
        background,
        cfg: *cfg,
    };
    let v = s.mu.tape().custom(
        Rc::new(op),
        &[s.mu, s.log_scale, s.rot, s.opacity_logit, s.color],
        out,
    )?;
    Ok((v, stats))
}

/// Per-primitive gradient accumulators in screen space.
#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl CustomOp for RasterOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        let cam = &self.cam;
        let attrs = Attrs {
            mu: inputs[0].data(),
            log_scale: inputs[1].data(),
            rot: inputs[2].data(),
            opacity_logit: inputs[3].data(),
            color: inputs[4].data(),
        };
        let lay = layout(&attrs, cam, &self.cfg);
        let mut sg = vec![ScreenGrad::default(); lay.geoms.len()];
        let go = grad_output.data();
        let mut alphas: Vec<f64> = Vec::new();
        let mut trans: Vec<f64> = Vec::new();
        for (p, bin) in lay.bins.iter().enumerate() {
            let gc = [go[3 * p], go[3 * p + 1], go[3 * p + 2]];
            if bin.is_empty() || gc == [0.0; 3] {
                continue;
            }
            let (x, y) = (p % cam.width, p / cam.width);
            alphas.clear();
            trans.clear();
            let mut tr = 1.0;
            for &k in bin {
                let g = &lay.geoms[k as usize].1;
                let a = g.opacity * footprint(g, x, y).0;
                alphas.push(a);
                trans.push(tr);
                tr *= 1.0 - a;
            }
            let mut behind = self.background;
            for (slot, &k) in bin.iter().enumerate().rev() {
                let g = &lay.geoms[k as usize].1;
                let (a, t) = (alphas[slot], trans[slot]);
                let (gauss, dx, dy) = footprint(g, x, y);
                let acc = &mut sg[k as usize];
                let mut g_alpha = 0.0;
                for ch in 0..3 {
                    acc.color[ch] += gc[ch] * t * a;
                    g_alpha += gc[ch] * t * (g.color[ch] - behind[ch]);
                    behind[ch] = a * g.color[ch] + (1.0 - a) * behind[ch];
                }
                acc.opacity += g_alpha * gauss;
                let g_power = g_alpha * a;
                let [ca, cb, cc] = g.conic;
                acc.conic[0] += -0.5 * g_power * dx * dx;
                acc.conic[1] += -g_power * dx * dy;
                acc.conic[2] += -0.5 * g_power * dy * dy;
                acc.mean[0] += g_power * (ca * dx + cb * dy);
                acc.mean[1] += g_power * (cb * dx + cc * dy);
            }
        }

        let n = attrs.len();
        let mut g_mu = vec![0.0; 3 * n];
        let mut g_ls = vec![0.0; 3 * n];
        let mut g_rot = vec![0.0; 4 * n];
        let mut g_op = vec![0.0; n];
        let mut g_col = vec![0.0; 3 * n];
        let w = cam.rotation();
        for ((i, g), s) in lay.geoms.iter().zip(&sg) {
            let i = *i;
            g_col[3 * i..3 * i + 3].copy_from_slice(&s.color);
            g_op[i] = s.opacity * g.opacity * (1.0 - g.opacity);
            let pg = chain_to_world(g, s, cam, &w);
            g_mu[3 * i..3 * i + 3].copy_from_slice(&pg.mu);
            g_ls[3 * i..3 * i + 3].copy_from_slice(&pg.log_scale);
            g_rot[4 * i..4 * i + 4].copy_from_slice(&pg.rot);
        }
        let grads = [(g_mu, 3), (g_ls, 3), (g_rot, 4), (g_op, 1), (g_col, 3)];
        grads
            .into_iter()
            .zip(needs)
            .map(|((g, k), &need)| {
                if need {
                    Ok(Some(Tensor::new(&[n, k], g)?))
                } else {
                    Ok(None)
                }
            })
            .collect()
    }
}

struct WorldGrad {
    mu: Vec3,
    log_scale: Vec3,
    rot: Quat,
}

/// Carries screen-space gradients back to position, scale and rotation.
fn chain_to_world(g: &Geom, s: &ScreenGrad, cam: &Camera, w: &Mat3) -> WorldGrad {
    let [a, b, c] = g.conic;
    // dL/dK as a symmetric matrix; the off-diagonal scalar appears twice.
    let gk = [
        [s.conic[0], 0.5 * s.conic[1]],
        [0.5 * s.conic[1], s.conic[2]],
    ];
    let k = [[a, b], [b, c]];
    let mut kg = [[0.0; 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            kg[r][col] = (0..2).map(|m| k[r][m] * gk[m][col]).sum();
        }
    }
    let mut gcov = [[0.0; 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            gcov[r][col] = -(0..2).map(|m| kg[r][m] * k[m][col]).sum::<f64>();
        }
    }
    // cov = T Σ Tᵀ.
    let t = &g.jw;
    let mut t_sigma = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            t_sigma[r][col] = (0..3).map(|m| t[r][m] * g.sigma[m][col]).sum();
        }
    }
    let mut g_t = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            g_t[r][col] = 2.0 * (0..2).map(|m| gcov[r][m] * t_sigma[m][col]).sum::<f64>();
        }
    }
    let mut g_sigma = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            g_sigma[r][col] = (0..2)
                .map(|m| {
                    (0..2)
                        .map(|l| t[m][r] * gcov[m][l] * t[l][col])
                        .sum::<f64>()
                })
                .sum();
        }
    }
    // T = J W.
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            g_j[r][col] = (0..3).map(|m| g_t[r][m] * w[col][m]).sum();
        }
    }
    let [tx, ty, tz] = g.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_cam = [0.0; 3];
    g_cam[0] += g_j[0][2] * (-fx / tz2) + s.mean[0] * fx / tz;
    g_cam[1] += g_j[1][2] * (-fy / tz2) + s.mean[1] * fy / tz;
    g_cam[2] += g_j[0][0] * (-fx / tz2)
        + g_j[0][2] * (2.0 * fx * tx / tz3)
        + g_j[1][1] * (-fy / tz2)
        + g_j[1][2] * (2.0 * fy * ty / tz3)
        - s.mean[0] * fx * tx / tz2
        - s.mean[1] * fy * ty / tz2;
    let mu = [0, 1, 2].map(|col| (0..3).map(|r| w[r][col] * g_cam[r]).sum::<f64>());

    // Σ = M Mᵀ with M = R diag(s).
    let r = &g.rmat;
    let sc = g.scale;
    let mut g_m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g_m[i][j] = 2.0 * (0..3).map(|l| g_sigma[i][l] * r[l][j] * sc[j]).sum::<f64>();
        }
    }
    let log_scale = [0, 1, 2].map(|j| (0..3).map(|i| g_m[i][j] * r[i][j]).sum::<f64>() * sc[j]);
    let mut gr = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gr[i][j] = g_m[i][j] * sc[j];
        }
    }
    let [qw, qx, qy, qz] = g.qhat;
    let dq = [
        2.0 * (-qz * gr[0][1] + qy * gr[0][2] + qz * gr[1][0] - qx * gr[1][2] - qy * gr[2][0]
            + qx * gr[2][1]),
        2.0 * (qy * gr[0][1] + qz * gr[0][2] + qy * gr[1][0] - 2.0 * qx * gr[1][1] - qw * gr[1][2]
            + qz * gr[2][0]
            + qw * gr[2][1]
            - 2.0 * qx * gr[2][2]),
        2.0 * (-2.0 * qy * gr[0][0]
            + qx * gr[0][1]
            + qw * gr[0][2]
            + qx * gr[1][0]
            + qz * gr[1][2]
            - qw * gr[2][0]
            + qz * gr[2][1]
            - 2.0 * qy * gr[2][2]),
        2.0 * (-2.0 * qz * gr[0][0] - qw * gr[0][1] + qx * gr[0][2] + qw * gr[1][0]
            - 2.0 * qz * gr[1][1]
            + qy * gr[1][2]
            + qx * gr[2][0]
            + qy * gr[2][1]),
    ];
    let dot: f64 = (0..4).map(|k| dq[k] * g.qhat[k]).sum();
    let rot = [0, 1, 2, 3].map(|k| (dq[k] - g.qhat[k] * dot) / g.qnorm);
    WorldGrad { mu, log_scale, rot }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{quat_normalize, Aabb, IDENTITY_QUAT};
    use crate::testutil::{assert_close, fd_grad, rng};
    use rand::Rng;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 1.6, w, h)
    }

    fn prim(mu: Vec3, s: f64, opacity: f64, color: Vec3) -> GaussianPrimitive {
        GaussianPrimitive::new(mu, [s; 3], IDENTITY_QUAT, opacity, color).unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = cam(64, 48);
        let cfg = RasterConfig::default();
        let p = project(&prim([0.0; 3], 0.1, 0.5, [1.0; 3]), &c, &cfg).unwrap();
        assert!((p.mean[0] - c.cx).abs() < 1e-12 && (p.mean[1] - c.cy).abs() < 1e-12);
        let want = (c.fx * 0.1 / 4.0).powi(2) + 0.3;
        assert!((p.cov[0] - want).abs() < 1e-9 && (p.cov[2] - want).abs() < 1e-9);
        assert!(p.cov[1].abs() < 1e-12);
        assert!(project(&prim([0.0, 0.0, -5.0], 0.1, 0.5, [1.0; 3]), &c, &cfg).is_none());
    }

    #[test]
    fn projected_covariances_are_positive_definite() {
        let mut r = rng(90);
        let c = cam(64, 64);
        for _ in 0..100 {
            let mut p = prim([0; 3].map(|_| r.gen_range(-1.0..1.0)), 1.0, 0.5, [0.5; 3]);
            p.log_scale = [0; 3].map(|_| r.gen_range(-5.0..0.0));
            p.rot = quat_normalize([0; 4].map(|_| r.gen_range(-1.0..1.0))).unwrap();
            let pr = project(&p, &c, &RasterConfig::default()).unwrap();
            let m = nalgebra::Matrix2::new(pr.cov[0], pr.cov[1], pr.cov[1], pr.cov[2]);
            assert!(m.symmetric_eigen().eigenvalues.iter().all(|&e| e > 0.0));
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = Scene::empty(Aabb::cube(1.0));
        let (img, stats) = rasterize(
            &scene,
            &cam(8, 6),
            [0.2, 0.4, 0.6],
            &RasterConfig::default(),
        )
        .unwrap();
        assert_eq!(img, ImageBuffer::filled(8, 6, [0.2, 0.4, 0.6]));
        assert_eq!(stats.drawn, 0);
    }

    #[test]
    fn single_primitive_peaks_at_its_pixel() {
        let c = cam(32, 32);
        // Place the primitive so it projects onto the centre of pixel (20, 11).
        let (px, py) = (20.5, 11.5);
        let z = 4.0;
        let cam_pt = [(px - c.cx) * z / c.fx, (py - c.cy) * z / c.fy, z];
        let (rot, tr) = (c.rotation(), c.translation());
        let mu = [0, 1, 2].map(|j| (0..3).map(|i| rot[i][j] * (cam_pt[i] - tr[i])).sum::<f64>());
        let p = prim(mu, 0.05, 0.99, [1.0, 1.0, 1.0]);
        let pr = project(&p, &c, &RasterConfig::default()).unwrap();
        assert!(
            (pr.mean[0] - px).abs() < 1e-9 && (pr.mean[1] - py).abs() < 1e-9,
            "{pr:?}"
        );
        let scene = Scene::new(vec![p], Aabb::cube(1.0));
        let (img, _) = rasterize(&scene, &c, [0.0; 3], &RasterConfig::default()).unwrap();
        let mut best = (0, 0, -1.0);
        for y in 0..32 {
            for x in 0..32 {
                let l = img.pixel(x, y).iter().sum::<f64>();
                if l > best.2 {
                    best = (x, y, l);
                }
            }
        }
        assert_eq!((best.0, best.1), (20, 11));
    }

    #[test]
    fn front_primitive_hides_back_one() {
        // Odd size: the optical axis hits the centre of pixel (8, 8).
        let c = cam(17, 17);
        let red = prim([0.0, 0.0, -1.0], 0.4, 0.999_999, [1.0, 0.0, 0.0]);
        let blue = prim([0.0, 0.0, 1.0], 0.4, 0.999_999, [0.0, 0.0, 1.0]);
        // Index order must not matter: depth decides.
        let scene = Scene::new(vec![blue, red], Aabb::cube(2.0));
        let (img, _) = rasterize(&scene, &c, [1.0; 3], &RasterConfig::default()).unwrap();
        let px = img.pixel(8, 8);
        assert!(
            (px[0] - 1.0).abs() < 1e-3 && px[1] < 1e-3 && px[2] < 1e-3,
            "{px:?}"
        );
    }

    #[test]
    fn compositing_weights_sum_to_one() {
        let mut r = rng(91);
        let c = cam(16, 16);
        let prims: Vec<_> = (0..10)
            .map(|_| {
                prim(
                    [0; 3].map(|_| r.gen_range(-0.6..0.6)),
                    r.gen_range(0.05..0.3),
                    r.gen_range(0.1..0.9),
                    [1.0; 3],
                )
            })
            .collect();
        let scene = Scene::new(prims, Aabb::cube(1.0));
        // White primitives on black give the summed weights; black on white
        // gives the background weight. Together they must reach one.
        let (front, _) = rasterize(&scene, &c, [0.0; 3], &RasterConfig::default()).unwrap();
        let mut dark = scene.clone();
        for p in &mut dark.primitives {
            p.color = [0.0; 3];
        }
        let (back, _) = rasterize(&dark, &c, [1.0; 3], &RasterConfig::default()).unwrap();
        for (a, b) in front.data().iter().zip(back.data()) {
            assert!(*a <= 1.0 + 1e-12);
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_primitives_are_order_invariant() {
        let c = cam(32, 32);
        let a = prim([-0.8, 0.0, 0.0], 0.05, 0.8, [1.0, 0.0, 0.0]);
        let b = prim([0.8, 0.0, 0.0], 0.05, 0.8, [0.0, 1.0, 0.0]);
        let cfg = RasterConfig::default();
        let one = rasterize(
            &Scene::new(vec![a.clone(), b.clone()], Aabb::cube(1.0)),
            &c,
            [0.0; 3],
            &cfg,
        )
        .unwrap()
        .0;
        let two = rasterize(&Scene::new(vec![b, a], Aabb::cube(1.0)), &c, [0.0; 3], &cfg)
            .unwrap()
            .0;
        assert_eq!(one, two);
    }

    #[test]
    fn gradients_match_fd_for_every_attribute() {
        let mut r = rng(92);
        let c = cam(24, 20);
        let n = 4;
        let mut vals = [
            Tensor::zeros(&[n, 3]),
            Tensor::zeros(&[n, 3]),
            Tensor::zeros(&[n, 4]),
            Tensor::zeros(&[n, 1]),
            Tensor::zeros(&[n, 3]),
        ];
        for (v, (lo, hi)) in vals.iter_mut().zip([
            (-0.5, 0.5),
            (-2.5, -1.5),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (0.0, 1.0),
        ]) {
            for x in v.data_mut() {
                *x = r.gen_range(lo..hi);
            }
        }
        let weights = crate::testutil::random_tensor(&mut r, &[24 * 20, 3], -1.0, 1.0);
        let eval = |vals: &[Tensor; 5]| {
            let tape = Tape::new();
            let v: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
            let s = SplatVars {
                mu: v[0],
                log_scale: v[1],
                rot: v[2],
                opacity_logit: v[3],
                color: v[4],
            };
            let (img, _) =
                rasterize_graph(s, &c, [0.3, 0.6, 0.9], &RasterConfig::default()).unwrap();
            let l = img
                .mul(tape.constant(weights.clone()))
                .unwrap()
                .sum()
                .unwrap();
            (l.item().unwrap(), tape.grad(l, &v).unwrap().values())
        };
        let (_, grads) = eval(&vals);
        for k in 0..5 {
            let want = fd_grad(
                &mut |x| {
                    let mut v = vals.clone();
                    v[k] = x.clone();
                    eval(&v).0
                },
                &vals[k],
                1e-6,
            );
            assert_close(&grads[k], &want, 1e-4, 1e-6);
        }
    }
}
