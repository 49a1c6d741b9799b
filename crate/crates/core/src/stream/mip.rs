use std::cell::Cell;

use crate::render::ImageBuffer;

use super::StreamError;

/// Clamp window for scale-aware level selection.
///
/// `base_scale` is the footprint of one level-0 texel along each axis and
/// `ratios` the resolution ratio between level 0 and the coarsest level, so
/// the usable level range per axis is `[0, log2 r]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MipSelectConfig {
    pub ratios: [u32; 3],
    pub base_scale: [f64; 3],
}

impl Default for MipSelectConfig {
    fn default() -> Self {
        Self {
            ratios: [8; 3],
            base_scale: [1.0; 3],
        }
    }
}

impl MipSelectConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.ratios.iter().any(|&r| r < 1) {
            return Err(StreamError::InvalidConfig(format!(
                "ratios {:?} must be >= 1",
                self.ratios
            )));
        }
        if self.base_scale.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(StreamError::InvalidConfig(format!(
                "base_scale {:?} must be positive",
                self.base_scale
            )));
        }
        Ok(())
    }
}

/// Every intermediate of [`mip_level`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MipLevel {
    pub clamped_scale: [f64; 3],
    pub axis_levels: [f64; 3],
    pub dominant_axis: usize,
    /// Per-axis levels followed by the dominant axis level.
    pub principal: [f64; 4],
    pub mean_level: f64,
    pub anisotropy: f64,
    pub beta: f64,
    pub level: [f64; 4],
}

/// Raw blend weight `tanh(ρ/3 − 1) / (1 + tanh(ρ/3 − 1))`.
pub fn beta_raw(rho: f64) -> f64 {
    let t = (rho / 3.0 - 1.0).tanh();
    t / (1.0 + t)
}

/// [`beta_raw`] limited to `[0, 0.5]`.
pub fn beta(rho: f64) -> f64 {
    beta_raw(rho).clamp(0.0, 0.5)
}

/// Anisotropic mip level for a primitive with world-space scale `s`.
pub fn mip_level(s: [f64; 3], cfg: &MipSelectConfig) -> Result<MipLevel, StreamError> {
    cfg.validate()?;
    if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(StreamError::NonPositiveScale(s));
    }
    let mut clamped_scale = [0.0; 3];
    let mut axis_levels = [0.0; 3];
    let mut ratio = [0.0; 3];
    for k in 0..3 {
        let half = cfg.base_scale[k] / 2.0;
        clamped_scale[k] = s[k].clamp(half, half * cfg.ratios[k] as f64);
        axis_levels[k] = (2.0 * clamped_scale[k] / cfg.base_scale[k]).log2();
        let top = (cfg.ratios[k] as f64).log2();
        ratio[k] = if top > 0.0 { axis_levels[k] / top } else { 0.0 };
    }
    let mut dominant_axis = 0;
    for k in 1..3 {
        if ratio[k] > ratio[dominant_axis] {
            dominant_axis = k;
        }
    }
    let principal = [
        axis_levels[0],
        axis_levels[1],
        axis_levels[2],
        axis_levels[dominant_axis],
    ];
    let mean_level = axis_levels.iter().sum::<f64>() / 3.0;
    let hi = axis_levels.iter().cloned().fold(f64::MIN, f64::max);
    let lo = axis_levels.iter().cloned().fold(f64::MAX, f64::min);
    let anisotropy = if hi == 0.0 {
        1.0
    } else if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    };
    let b = beta(anisotropy);
    let level = principal.map(|l| l - b * (l - mean_level));
    Ok(MipLevel {
        clamped_scale,
        axis_levels,
        dominant_axis,
        principal,
        mean_level,
        anisotropy,
        beta: b,
        level,
    })
}

/// Image pyramid: each level halves both sides (floor, at least 1).
#[derive(Clone, Debug)]
pub struct MipChain {
    levels: Vec<ImageBuffer>,
    clamped: Cell<usize>,
}

impl MipChain {
    pub fn levels(&self) -> &[ImageBuffer] {
        &self.levels
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Number of samples whose level had to be clamped into range.
    pub fn clamp_count(&self) -> usize {
        self.clamped.get()
    }

    /// Bilinear lookup with clamp-to-edge, pixel centres at `(i + 0.5)/w`.
    pub fn bilinear(&self, level: usize, uv: [f64; 2]) -> [f64; 3] {
        let img = &self.levels[level];
        let coord = |t: f64, n: usize| {
            let x = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (x.floor() as usize).min(n - 1);
            (i, (i + 1).min(n - 1), x - i as f64)
        };
        let (x0, x1, fx) = coord(uv[0], img.width);
        let (y0, y1, fy) = coord(uv[1], img.height);
        let (a, b, c, d) = (
            img.pixel(x0, y0),
            img.pixel(x1, y0),
            img.pixel(x0, y1),
            img.pixel(x1, y1),
        );
        [0, 1, 2].map(|ch| {
            let top = a[ch] + fx * (b[ch] - a[ch]);
            let bottom = c[ch] + fx * (d[ch] - c[ch]);
            top + fy * (bottom - top)
        })
    }

    /// Bilinear in the two nearest levels, blended linearly in `level`.
    pub fn sample(&self, uv: [f64; 2], level: f64) -> [f64; 3] {
        let top = self.max_level() as f64;
        let l = if level.is_nan() { 0.0 } else { level };
        if !(0.0..=top).contains(&l) || level.is_nan() {
            self.clamped.set(self.clamped.get() + 1);
        }
        let l = l.clamp(0.0, top);
        let lo = l.floor();
        let f = l - lo;
        let a = self.bilinear(lo as usize, uv);
        if f == 0.0 {
            return a;
        }
        let b = self.bilinear(lo as usize + 1, uv);
        [0, 1, 2].map(|ch| a[ch] + f * (b[ch] - a[ch]))
    }
}

pub fn build_mipchain(image: &ImageBuffer) -> MipChain {
    let mut levels = vec![image.clone()];
    loop {
        let prev = levels.last().expect("nonempty");
        if prev.width == 1 && prev.height == 1 {
            break;
        }
        levels.push(downsample(prev));
    }
    MipChain {
        levels,
        clamped: Cell::new(0),
    }
}

/// 2×2 box filter; a trailing odd row or column is dropped.
pub fn downsample(img: &ImageBuffer) -> ImageBuffer {
    let w = (img.width / 2).max(1);
    let h = (img.height / 2).max(1);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let xs = [2 * x, (2 * x + 1).min(img.width - 1)];
            let ys = [2 * y, (2 * y + 1).min(img.height - 1)];
            let mut acc = [0.0; 3];
            for &yy in &ys {
                for &xx in &xs {
                    let p = img.pixel(xx, yy);
                    for ch in 0..3 {
                        acc[ch] += 0.25 * p[ch];
                    }
                }
            }
            data.extend(acc.map(|v: f64| v.clamp(0.0, 1.0)));
        }
    }
    ImageBuffer::new(w, h, data).expect("box filter stays in range")
}
