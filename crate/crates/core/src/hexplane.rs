//! Six-plane space-time feature encoder.
//!
//! A query `u = (x, y, z, t) ∈ [0,1]⁴` is projected onto the planes
//! XY, XZ, YZ, XT, YT, ZT. Each plane is bilinearly interpolated, the six
//! results are multiplied channelwise, and the per-level products are
//! concatenated. Spatial resolution grows with the level; the time axis of
//! every level uses the same `time_resolution`.
//!
//! Grid nodes sit on the boundary (node `0` at coordinate 0, node `R-1` at
//! coordinate 1). Plane parameters are stored as `[Ra·Rb, C]` with the first
//! axis of the pair as the slow index.

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, CustomOp, Tensor, Var};
use crate::gauss::Aabb;

/// Axis pairs of the six planes; axis 3 is time.
pub const PLANE_AXES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];
pub const PLANE_NAMES: [&str; 6] = ["XY", "XZ", "YZ", "XT", "YT", "ZT"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HexPlaneError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("plane {index} has shape {got:?}, expected {want:?}")]
    PlaneShape {
        index: usize,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneConfig {
    pub base_resolution: usize,
    pub upsampling: Vec<usize>,
    pub time_resolution: usize,
    pub channels: usize,
}

impl Default for HexPlaneConfig {
    fn default() -> Self {
        Self {
            base_resolution: 64,
            upsampling: vec![2, 4],
            time_resolution: 25,
            channels: 16,
        }
    }
}

impl HexPlaneConfig {
    pub fn validate(&self) -> Result<(), HexPlaneError> {
        let bad = |m: String| Err(HexPlaneError::InvalidConfig(m));
        if self.base_resolution < 2 || self.time_resolution < 2 {
            return bad(format!(
                "resolutions must be at least 2 (base {}, time {})",
                self.base_resolution, self.time_resolution
            ));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        let res = self.spatial_resolutions();
        if res.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("level resolutions must increase, got {res:?}"));
        }
        Ok(())
    }

    /// Spatial resolution of every level: base, base·u₁, base·u₂, ...
    pub fn spatial_resolutions(&self) -> Vec<usize> {
        std::iter::once(self.base_resolution)
            .chain(self.upsampling.iter().map(|u| self.base_resolution * u))
            .collect()
    }

    pub fn levels(&self) -> usize {
        1 + self.upsampling.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.channels * self.levels()
    }

    /// `(Ra, Rb)` for every plane, level-major.
    pub fn plane_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(6 * self.levels());
        for r in self.spatial_resolutions() {
            for (a, b) in PLANE_AXES {
                let res = |axis: usize| if axis == 3 { self.time_resolution } else { r };
                dims.push((res(a), res(b)));
            }
        }
        dims
    }
}

/// Encoder parameters plus a counter of clamped queries.
#[derive(Debug)]
pub struct HexPlaneEncoder {
    config: HexPlaneConfig,
    planes: Vec<Tensor>,
    clamps: AtomicU64,
}

impl Clone for HexPlaneEncoder {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            planes: self.planes.clone(),
            clamps: AtomicU64::new(self.clamp_count()),
        }
    }
}

impl PartialEq for HexPlaneEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.planes == other.planes
    }
}

impl HexPlaneEncoder {
    /// Planes drawn uniformly from `[0.9, 1.1]`.
    pub fn new(config: HexPlaneConfig, rng: &mut impl Rng) -> Result<Self, HexPlaneError> {
        config.validate()?;
        let c = config.channels;
        let planes = config
            .plane_dims()
            .into_iter()
            .map(|(ra, rb)| {
                let data = (0..ra * rb * c).map(|_| rng.gen_range(0.9..1.1)).collect();
                Tensor::new(&[ra * rb, c], data).expect("shape matches")
            })
            .collect();
        Ok(Self::from_planes_unchecked(config, planes))
    }

    pub fn filled(config: HexPlaneConfig, value: f64) -> Result<Self, HexPlaneError> {
        config.validate()?;
        let c = config.channels;
        let planes = config
            .plane_dims()
            .into_iter()
            .map(|(ra, rb)| Tensor::full(&[ra * rb, c], value))
            .collect();
        Ok(Self::from_planes_unchecked(config, planes))
    }

    pub fn from_planes(config: HexPlaneConfig, planes: Vec<Tensor>) -> Result<Self, HexPlaneError> {
        config.validate()?;
        let dims = config.plane_dims();
        if planes.len() != dims.len() {
            return Err(HexPlaneError::InvalidConfig(format!(
                "expected {} planes, got {}",
                dims.len(),
                planes.len()
            )));
        }
        for (index, (p, (ra, rb))) in planes.iter().zip(&dims).enumerate() {
            let want = vec![ra * rb, config.channels];
            if p.shape() != want.as_slice() {
                return Err(HexPlaneError::PlaneShape {
                    index,
                    got: p.shape().to_vec(),
                    want,
                });
            }
        }
        Ok(Self::from_planes_unchecked(config, planes))
    }

    fn from_planes_unchecked(config: HexPlaneConfig, planes: Vec<Tensor>) -> Self {
        Self {
            config,
            planes,
            clamps: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &HexPlaneConfig {
        &self.config
    }

    pub fn planes(&self) -> &[Tensor] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Tensor] {
        &mut self.planes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Number of query coordinates clamped into `[0,1]` so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Feature vector of one normalized query.
    pub fn encode(&self, u: [f64; 4]) -> Vec<f64> {
        let layout = Layout::new(&self.config);
        let planes: Vec<&[f64]> = self.planes.iter().map(|p| p.data()).collect();
        let mut out = vec![0.0; layout.feature_dim()];
        let (q, clamped) = clamp_query(u);
        self.clamps.fetch_add(clamped as u64, Ordering::Relaxed);
        layout.encode_row(&planes, q, &mut out);
        out
    }

    /// Batched encode of raw positions `mu: [n,3]` at normalized time `t`.
    ///
    /// `planes` must be the tape values of this encoder's planes, in order.
    /// The result `[n, feature_dim]` is differentiable with respect to `mu`
    /// and every plane (first order).
    pub fn encode_graph<'t>(
        &self,
        mu: Var<'t>,
        planes: &[Var<'t>],
        t: f64,
        bounds: &Aabb,
    ) -> Result<Var<'t>, AutodiffError> {
        let layout = Layout::new(&self.config);
        if planes.len() != layout.dims.len() {
            return Err(AutodiffError::InvalidArgument(format!(
                "expected {} planes, got {}",
                layout.dims.len(),
                planes.len()
            )));
        }
        let mu_val = mu.value();
        let n = match mu_val.dims2() {
            Some((n, 3)) => n,
            _ => {
                return Err(AutodiffError::InvalidArgument(format!(
                    "encode expects [n,3] positions, got {:?}",
                    mu_val.shape()
                )))
            }
        };
        let plane_vals: Vec<Tensor> = planes.iter().map(|p| p.value()).collect();
        let plane_data: Vec<&[f64]> = plane_vals.iter().map(|p| p.data()).collect();
        let f = layout.feature_dim();
        let mut out = vec![0.0; n * f];
        let mut clamped = 0u64;
        for i in 0..n {
            let m = &mu_val.data()[3 * i..3 * i + 3];
            let p = bounds.normalize([m[0], m[1], m[2]]);
            let (q, c) = clamp_query([p[0], p[1], p[2], t]);
            clamped += c as u64;
            layout.encode_row(&plane_data, q, &mut out[i * f..(i + 1) * f]);
        }
        self.clamps.fetch_add(clamped, Ordering::Relaxed);
        let op = EncodeOp {
            layout,
            t,
            bounds: *bounds,
        };
        let mut inputs = Vec::with_capacity(1 + planes.len());
        inputs.push(mu);
        inputs.extend_from_slice(planes);
        mu.tape()
            .custom(Rc::new(op), &inputs, Tensor::new(&[n, f], out)?)
    }

    pub fn tv_loss(&self) -> f64 {
        let dims = self.config.plane_dims();
        self.planes
            .iter()
            .zip(&dims)
            .map(|(p, &(ra, rb))| plane_tv(p.data(), ra, rb, self.config.channels))
            .sum()
    }

    /// Total variation of the given plane values, as a tape scalar.
    pub fn tv_loss_graph<'t>(&self, planes: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let first = planes
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("no planes".into()))?;
        let dims = self.config.plane_dims();
        let c = self.config.channels;
        let value: f64 = planes
            .iter()
            .zip(&dims)
            .map(|(p, &(ra, rb))| plane_tv(p.value().data(), ra, rb, c))
            .sum();
        first.tape().custom(
            Rc::new(TvOp { dims, channels: c }),
            planes,
            Tensor::scalar(value),
        )
    }
}

/// Clamps into `[0,1]⁴`; reports how many coordinates moved.
fn clamp_query(u: [f64; 4]) -> ([f64; 4], u32) {
    let mut n = 0;
    let q = u.map(|x| {
        let c = x.clamp(0.0, 1.0);
        if c != x {
            n += 1;
        }
        c
    });
    (q, n)
}

/// Cell index and fractional offset of coordinate `u ∈ [0,1]` on `r` nodes.
fn locate(u: f64, r: usize) -> (usize, f64) {
    let x = u * (r - 1) as f64;
    let i = (x.floor() as usize).min(r - 2);
    (i, x - i as f64)
}

/// Bilinear stencil of one plane lookup.
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
    dwa: [f64; 4],
    dwb: [f64; 4],
}

fn stencil(ua: f64, ub: f64, ra: usize, rb: usize) -> Stencil {
    let (ia, fa) = locate(ua, ra);
    let (ib, fb) = locate(ub, rb);
    let base = ia * rb + ib;
    Stencil {
        idx: [base, base + rb, base + 1, base + rb + 1],
        w: [
            (1.0 - fa) * (1.0 - fb),
            fa * (1.0 - fb),
            (1.0 - fa) * fb,
            fa * fb,
        ],
        dwa: [-(1.0 - fb), 1.0 - fb, -fb, fb],
        dwb: [-(1.0 - fa), -fa, 1.0 - fa, fa],
    }
}

#[derive(Clone, Debug)]
struct Layout {
    dims: Vec<(usize, usize)>,
    channels: usize,
}

impl Layout {
    fn new(cfg: &HexPlaneConfig) -> Self {
        Self {
            dims: cfg.plane_dims(),
            channels: cfg.channels,
        }
    }

    fn levels(&self) -> usize {
        self.dims.len() / 6
    }

    fn feature_dim(&self) -> usize {
        self.levels() * self.channels
    }

    fn encode_row(&self, planes: &[&[f64]], u: [f64; 4], out: &mut [f64]) {
        let c = self.channels;
        for level in 0..self.levels() {
            let dst = &mut out[level * c..(level + 1) * c];
            dst.fill(1.0);
            for k in 0..6 {
                let p = 6 * level + k;
                let (a, b) = PLANE_AXES[k];
                let (ra, rb) = self.dims[p];
                let st = stencil(u[a], u[b], ra, rb);
                for (ch, d) in dst.iter_mut().enumerate() {
                    let v: f64 = (0..4)
                        .map(|j| st.w[j] * planes[p][st.idx[j] * c + ch])
                        .sum();
                    *d *= v;
                }
            }
        }
    }
}

struct EncodeOp {
    layout: Layout,
    t: f64,
    bounds: Aabb,
}

impl CustomOp for EncodeOp {
    fn name(&self) -> &'static str {
        "hexplane_encode"
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        let layout = &self.layout;
        let c = layout.channels;
        let f = layout.feature_dim();
        let mu = inputs[0].data();
        let n = mu.len() / 3;
        let planes: Vec<&[f64]> = inputs[1..].iter().map(|p| p.data()).collect();
        let go = grad_output.data();
        let extent = self.bounds.extent();

        let mut g_mu = needs[0].then(|| vec![0.0; mu.len()]);
        let mut g_planes: Vec<Option<Vec<f64>>> = needs[1..]
            .iter()
            .zip(&planes)
            .map(|(&need, p)| need.then(|| vec![0.0; p.len()]))
            .collect();

        let mut vals = vec![0.0; 6 * c];
        let mut prefix = vec![0.0; 7 * c];
        let mut suffix = vec![0.0; 7 * c];
        for i in 0..n {
            let p = self
                .bounds
                .normalize([mu[3 * i], mu[3 * i + 1], mu[3 * i + 2]]);
            let raw = [p[0], p[1], p[2], self.t];
            let (u, _) = clamp_query(raw);
            let inside = raw.map(|x| (0.0..=1.0).contains(&x));
            let mut g_x = [0.0; 3];
            for level in 0..layout.levels() {
                let stencils: Vec<Stencil> = (0..6)
                    .map(|k| {
                        let (a, b) = PLANE_AXES[k];
                        let (ra, rb) = layout.dims[6 * level + k];
                        stencil(u[a], u[b], ra, rb)
                    })
                    .collect();
                for k in 0..6 {
                    let pl = planes[6 * level + k];
                    for ch in 0..c {
                        vals[k * c + ch] = (0..4)
                            .map(|j| stencils[k].w[j] * pl[stencils[k].idx[j] * c + ch])
                            .sum();
                    }
                }
                // Products of the planes before and after k, per channel.
                prefix[..c].fill(1.0);
                suffix[6 * c..].fill(1.0);
                for k in 0..6 {
                    for ch in 0..c {
                        prefix[(k + 1) * c + ch] = prefix[k * c + ch] * vals[k * c + ch];
                        suffix[(5 - k) * c + ch] =
                            suffix[(6 - k) * c + ch] * vals[(5 - k) * c + ch];
                    }
                }
                let go_row = &go[i * f + level * c..i * f + (level + 1) * c];
                for k in 0..6 {
                    let p_idx = 6 * level + k;
                    let (a, b) = PLANE_AXES[k];
                    let (ra, rb) = layout.dims[p_idx];
                    let st = &stencils[k];
                    let pl = planes[p_idx];
                    for ch in 0..c {
                        let coef = go_row[ch] * prefix[k * c + ch] * suffix[(k + 1) * c + ch];
                        if coef == 0.0 {
                            continue;
                        }
                        if let Some(g) = g_planes[p_idx].as_mut() {
                            for j in 0..4 {
                                g[st.idx[j] * c + ch] += coef * st.w[j];
                            }
                        }
                        if g_mu.is_some() {
                            let (mut da, mut db) = (0.0, 0.0);
                            for j in 0..4 {
                                let v = pl[st.idx[j] * c + ch];
                                da += st.dwa[j] * v;
                                db += st.dwb[j] * v;
                            }
                            if a < 3 {
                                g_x[a] += coef * da * (ra - 1) as f64;
                            }
                            if b < 3 {
                                g_x[b] += coef * db * (rb - 1) as f64;
                            }
                        }
                    }
                }
            }
            if let Some(g) = g_mu.as_mut() {
                for k in 0..3 {
                    if inside[k] {
                        g[3 * i + k] = g_x[k] / extent[k];
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(inputs.len());
        out.push(match g_mu {
            Some(g) => Some(Tensor::new(inputs[0].shape(), g)?),
            None => None,
        });
        for (g, p) in g_planes.into_iter().zip(&inputs[1..]) {
            out.push(match g {
                Some(g) => Some(Tensor::new(p.shape(), g)?),
                None => None,
            });
        }
        Ok(out)
    }
}

/// Pooled mean of squared neighbour differences along both plane axes.
fn plane_tv(p: &[f64], ra: usize, rb: usize, c: usize) -> f64 {
    let mut acc = 0.0;
    for ia in 0..ra {
        for ib in 0..rb {
            for ch in 0..c {
                let v = p[(ia * rb + ib) * c + ch];
                if ia + 1 < ra {
                    acc += (p[((ia + 1) * rb + ib) * c + ch] - v).powi(2);
                }
                if ib + 1 < rb {
                    acc += (p[(ia * rb + ib + 1) * c + ch] - v).powi(2);
                }
            }
        }
    }
    acc / tv_count(ra, rb, c)
}

fn tv_count(ra: usize, rb: usize, c: usize) -> f64 {
    (((ra - 1) * rb + ra * (rb - 1)) * c) as f64
}

struct TvOp {
    dims: Vec<(usize, usize)>,
    channels: usize,
}

impl CustomOp for TvOp {
    fn name(&self) -> &'static str {
        "tv_loss"
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        let go = grad_output.item()?;
        let c = self.channels;
        let mut out = Vec::with_capacity(inputs.len());
        for ((x, &(ra, rb)), &need) in inputs.iter().zip(&self.dims).zip(needs) {
            if !need {
                out.push(None);
                continue;
            }
            let p = x.data();
            let scale = 2.0 * go / tv_count(ra, rb, c);
            let mut g = vec![0.0; p.len()];
            for ia in 0..ra {
                for ib in 0..rb {
                    for ch in 0..c {
                        let here = (ia * rb + ib) * c + ch;
                        for next in [
                            (ia + 1 < ra).then(|| ((ia + 1) * rb + ib) * c + ch),
                            (ib + 1 < rb).then(|| (ia * rb + ib + 1) * c + ch),
                        ]
                        .into_iter()
                        .flatten()
                        {
                            let d = scale * (p[next] - p[here]);
                            g[next] += d;
                            g[here] -= d;
                        }
                    }
                }
            }
            out.push(Some(Tensor::new(x.shape(), g)?));
        }
        Ok(out)
    }
}
