use std::rc::Rc;

use crate::autodiff::{AutodiffError, CustomOp, Tensor, Var};

use super::{ImageBuffer, RenderError};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_dssim: f64,
    pub tv_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            tv_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(RenderError::InvalidLoss(format!(
                "lambda_dssim {} outside [0, 1]",
                self.lambda_dssim
            )));
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(RenderError::InvalidLoss(format!(
                "tv_weight {}",
                self.tv_weight
            )));
        }
        Ok(())
    }
}

fn same_size(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), RenderError> {
    if a.width != b.width || a.height != b.height {
        return Err(RenderError::SizeMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    Ok(())
}

pub fn loss_l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, RenderError> {
    same_size(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Mean absolute error against a fixed target.
pub fn l1_graph<'t>(x: Var<'t>, target: &Tensor) -> Result<Var<'t>, AutodiffError> {
    x.sub(x.tape().constant(target.clone()))?.abs()?.mean()
}

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, RenderError> {
    same_size(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() && db > 0.0 {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (k, v) in g.iter_mut().enumerate() {
        let d = k as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// A single-channel plane, `h` rows of `w`.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(data: &[f64], w: usize, h: usize, ch: usize) -> Self {
        Self {
            w,
            h,
            v: (0..w * h).map(|p| data[3 * p + ch]).collect(),
        }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self
                .v
                .iter()
                .zip(&other.v)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Valid-mode separable Gaussian blur.
    fn blur(&self, g: &[f64; SSIM_WINDOW]) -> Plane {
        let k = SSIM_WINDOW;
        let (ow, oh) = (self.w + 1 - k, self.h + 1 - k);
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..k).map(|i| g[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane {
            w: ow,
            h: oh,
            v: out,
        }
    }

    /// Adjoint of [`Plane::blur`] back to a `w × h` plane.
    fn blur_adjoint(&self, g: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let k = SSIM_WINDOW;
        let ow = self.w;
        let mut tmp = vec![0.0; h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                let v = self.v[y * ow + x];
                for i in 0..k {
                    tmp[(y + i) * ow + x] += g[i] * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..ow {
                let v = tmp[y * ow + x];
                for i in 0..k {
                    out[y * w + x + i] += g[i] * v;
                }
            }
        }
        Plane { w, h, v: out }
    }
}

/// Local statistics of one channel pair.
struct Stats {
    mx: Plane,
    my: Plane,
    sxx: Plane,
    syy: Plane,
    sxy: Plane,
}

fn stats(x: &Plane, y: &Plane, g: &[f64; SSIM_WINDOW]) -> Stats {
    let mx = x.blur(g);
    let my = y.blur(g);
    let sxx = x.zip(x, |a, b| a * b).blur(g).zip(&mx, |s, m| s - m * m);
    let syy = y.zip(y, |a, b| a * b).blur(g).zip(&my, |s, m| s - m * m);
    let sxy = x.zip(y, |a, b| a * b).blur(g);
    let sxy = Plane {
        v: sxy
            .v
            .iter()
            .zip(&mx.v)
            .zip(&my.v)
            .map(|((s, a), b)| s - a * b)
            .collect(),
        ..sxy
    };
    Stats {
        mx,
        my,
        sxx,
        syy,
        sxy,
    }
}

fn check_dims(len: usize, w: usize, h: usize) -> Result<(), RenderError> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(RenderError::TooSmall(w, h));
    }
    if len != w * h * 3 {
        return Err(RenderError::ImageSize {
            expected: w * h * 3,
            got: len,
        });
    }
    Ok(())
}

fn ssim_raw(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let g = gaussian_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let s = stats(
            &Plane::channel(x, w, h, ch),
            &Plane::channel(y, w, h, ch),
            &g,
        );
        for p in 0..s.mx.v.len() {
            let (mx, my) = (s.mx.v[p], s.my.v[p]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * s.sxy.v[p] + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = s.sxx.v[p] + s.syy.v[p] + C2;
            total += a1 * a2 / (b1 * b2);
        }
        count += s.mx.v.len();
    }
    total / count as f64
}

/// Mean SSIM over valid window positions and the three channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, RenderError> {
    same_size(a, b)?;
    check_dims(a.data().len(), a.width, a.height)?;
    Ok(ssim_raw(a.data(), b.data(), a.width, a.height))
}

pub fn dssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, RenderError> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

struct SsimOp {
    target: Tensor,
    w: usize,
    h: usize,
}

/// SSIM of a `[h·w, 3]` image against a fixed target, differentiable in the image.
pub fn ssim_graph<'t>(
    x: Var<'t>,
    target: &Tensor,
    w: usize,
    h: usize,
) -> Result<Var<'t>, RenderError> {
    let xv = x.value();
    check_dims(xv.len(), w, h)?;
    check_dims(target.len(), w, h)?;
    let s = ssim_raw(xv.data(), target.data(), w, h);
    let op = SsimOp {
        target: target.clone(),
        w,
        h,
    };
    Ok(x.tape().custom(Rc::new(op), &[x], Tensor::scalar(s))?)
}

impl CustomOp for SsimOp {
    fn name(&self) -> &'static str {
        "ssim"
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
        let (w, h) = (self.w, self.h);
        let g = gaussian_taps();
        let x = inputs[0].data();
        let y = self.target.data();
        let count = 3 * (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
        let scale = grad_output.item()? / count as f64;
        let mut grad = vec![0.0; w * h * 3];
        for ch in 0..3 {
            let xp = Plane::channel(x, w, h, ch);
            let yp = Plane::channel(y, w, h, ch);
            let s = stats(&xp, &yp, &g);
            let n = s.mx.v.len();
            let mut alpha = Plane {
                w: s.mx.w,
                h: s.mx.h,
                v: vec![0.0; n],
            };
            let mut beta = Plane {
                w: s.mx.w,
                h: s.mx.h,
                v: vec![0.0; n],
            };
            let mut gamma = Plane {
                w: s.mx.w,
                h: s.mx.h,
                v: vec![0.0; n],
            };
            for p in 0..n {
                let (mx, my) = (s.mx.v[p], s.my.v[p]);
                let a1 = 2.0 * mx * my + C1;
                let a2 = 2.0 * s.sxy.v[p] + C2;
                let b1 = mx * mx + my * my + C1;
                let b2 = s.sxx.v[p] + s.syy.v[p] + C2;
                let ssim = a1 * a2 / (b1 * b2);
                let d_mx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * ssim / b1;
                let d_sxx = -ssim / b2;
                let d_sxy = 2.0 * a1 / (b1 * b2);
                alpha.v[p] = scale * (d_mx - 2.0 * mx * d_sxx - my * d_sxy);
                beta.v[p] = scale * 2.0 * d_sxx;
                gamma.v[p] = scale * d_sxy;
            }
            let ga = alpha.blur_adjoint(&g, w, h);
            let gb = beta.blur_adjoint(&g, w, h);
            let gc = gamma.blur_adjoint(&g, w, h);
            for p in 0..w * h {
                grad[3 * p + ch] = ga.v[p] + xp.v[p] * gb.v[p] + yp.v[p] * gc.v[p];
            }
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape(), grad)?)])
    }
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)/2 + tv_weight·TV` for a `[h·w, 3]` render.
pub fn total_loss<'t>(
    render: Var<'t>,
    gt: &Tensor,
    w: usize,
    h: usize,
    tv: Option<Var<'t>>,
    cfg: &LossConfig,
) -> Result<Var<'t>, RenderError> {
    let lam = cfg.lambda_dssim;
    let mut loss = l1_graph(render, gt)?.scale(1.0 - lam)?;
    if lam > 0.0 {
        let d = ssim_graph(render, gt, w, h)?.affine(-0.5 * lam, 0.5 * lam)?;
        loss = loss.add(d)?;
    }
    if let Some(tv) = tv {
        if cfg.tv_weight > 0.0 {
            loss = loss.add(tv.scale(cfg.tv_weight)?)?;
        }
    }
    Ok(loss)
}
