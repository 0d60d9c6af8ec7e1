//! Float image buffers, resampling and 8-bit PNG I/O.

use std::path::Path;

pub type Rgb = [f32; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

/// Single-channel float image (depth, masks, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, thiserror::Error)]
pub enum CanvasError {
    #[error("image io: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Bilinear tap positions and weights for a continuous pixel coordinate whose
/// pixel centers sit at `i + 0.5`. Coordinates are clamped to the edge.
#[inline]
pub(crate) fn bilinear_taps(x: f32, y: f32, w: usize, h: usize) -> [(usize, f32); 4] {
    let ([i00, i10, i01, i11], tx, ty) = bilinear_cell(x, y, w, h);
    [
        (i00, (1.0 - tx) * (1.0 - ty)),
        (i10, tx * (1.0 - ty)),
        (i01, (1.0 - tx) * ty),
        (i11, tx * ty),
    ]
}

/// Corner indices and fractional offsets of the bilinear cell around `(x, y)`.
fn bilinear_cell(x: f32, y: f32, w: usize, h: usize) -> ([usize; 4], f32, f32) {
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f32);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f32);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f32;
    let ty = fy - y0 as f32;
    ([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], tx, ty)
}

/// Lerp form, exact on constant neighborhoods.
#[inline]
fn bilerp(v: [f32; 4], tx: f32, ty: f32) -> f32 {
    let top = v[0] + (v[1] - v[0]) * tx;
    let bottom = v[2] + (v[3] - v[2]) * tx;
    top + (bottom - top) * ty
}

impl ColorImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.data[y * self.width + x] = c;
    }

    /// Bilinear sample at continuous pixel coordinates (centers at `i + 0.5`).
    pub fn sample(&self, x: f32, y: f32) -> Rgb {
        let (idx, tx, ty) = bilinear_cell(x, y, self.width, self.height);
        [0, 1, 2].map(|k| bilerp(idx.map(|i| self.data[i][k]), tx, ty))
    }

    /// Bilinear sample using only taps where `valid` holds, renormalized.
    /// Falls back to the nearest valid tap, then to a plain bilinear sample.
    pub fn sample_where(&self, x: f32, y: f32, valid: impl Fn(usize) -> bool) -> Rgb {
        let taps = bilinear_taps(x, y, self.width, self.height);
        let mut out = [0.0; 3];
        let mut total = 0.0;
        for (i, w) in taps {
            if valid(i) && w > 0.0 {
                let c = self.data[i];
                for k in 0..3 {
                    out[k] += w * c[k];
                }
                total += w;
            }
        }
        if total > 0.0 {
            return out.map(|v| v / total);
        }
        match taps
            .iter()
            .filter(|(i, _)| valid(*i))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            Some((i, _)) => self.data[*i],
            None => self.sample(x, y),
        }
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Self::from_fn(width, height, |x, y| {
            self.sample((x as f32 + 0.5) * sx, (y as f32 + 0.5) * sy)
        })
    }

    pub fn clamp01(mut self) -> Self {
        for c in &mut self.data {
            *c = c.map(|v| v.clamp(0.0, 1.0));
        }
        self
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| c.map(|v| to_u8(v) as f32 / 255.0))
                .collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut buf = Vec::with_capacity(self.data.len() * 3);
        for c in &self.data {
            buf.extend(c.iter().map(|&v| to_u8(v)));
        }
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            data: img
                .pixels()
                .map(|p| p.0.map(|v| v as f32 / 255.0))
                .collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), CanvasError> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, CanvasError> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f32::max)
    }
}

impl Plane {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let (idx, tx, ty) = bilinear_cell(x, y, self.width, self.height);
        bilerp(idx.map(|i| self.data[i]), tx, ty)
    }

    /// Grayscale 8-bit dump.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), CanvasError> {
        let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 1D Gaussian taps truncated at four standard deviations, unnormalized.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i32;
    (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable convolution with clamp-free borders: taps outside the image are
/// dropped (not renormalized). Callers normalize by convolving a coverage plane.
pub fn convolve_separable(plane: &Plane, kernel: &[f32]) -> Plane {
    use rayon::prelude::*;
    let (w, h) = (plane.width, plane.height);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane.data[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += g * src[sx as usize];
                }
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, &g) in kernel.iter().enumerate() {
            let sy = y as isize + k as isize - r;
            if sy >= 0 && (sy as usize) < h {
                let src = &tmp[sy as usize * w..(sy as usize + 1) * w];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += g * s;
                }
            }
        }
    });
    Plane {
        width: w,
        height: h,
        data: out,
    }
}
