use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;

use super::RenderError;

/// RGB image with channels in `[0, 1]`, stored row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RenderError> {
        if data.len() != width * height * 3 {
            return Err(RenderError::ImageSize {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RenderError::ChannelRange(v));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data).expect("valid fill")
    }

    /// Converts `[h·w, 3]` values, clamping into `[0, 1]`.
    pub fn from_tensor(width: usize, height: usize, t: &Tensor) -> Result<Self, RenderError> {
        let data: Vec<f64> = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(width, height, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.width * self.height, 3], self.data.clone()).expect("shape")
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) -> Result<(), RenderError> {
        if let Some(&v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RenderError::ChannelRange(v));
        }
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
        Ok(())
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v * 255.0).round() as u8));
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RenderError::Ppm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(RenderError::Ppm(format!(
                "unsupported magic {:?}",
                fields[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| RenderError::Ppm(format!("bad header number {s:?}")))
        };
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max != 255 {
            return Err(RenderError::Ppm(format!("maxval {max} is not 255")));
        }
        pos += 1;
        let body = bytes.get(pos..).unwrap_or(&[]);
        if body.len() != w * h * 3 {
            return Err(RenderError::Ppm(format!(
                "expected {} pixel bytes, found {}",
                w * h * 3,
                body.len()
            )));
        }
        Self::new(w, h, body.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        Self::from_ppm(&fs::read(path)?)
    }
}
