//! The texture being painted, addressed by UV.
//!
//! Texel `(col, row)` has its center at `u = (col + 0.5) / n`,
//! `v = 1 - (row + 0.5) / n`; row 0 is the top of the image, matching the OBJ
//! convention of `v` pointing up.

use std::path::Path;

use crate::canvas::{CanvasError, ColorImage, Rgb};

pub const DEFAULT_ATLAS_RESOLUTION: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    image: ColorImage,
}

impl TextureAtlas {
    pub fn new(resolution: usize, fill: Rgb) -> Self {
        Self {
            image: ColorImage::new(resolution, resolution, fill),
        }
    }

    /// Wraps a square image; channels are clamped into `[0, 1]`.
    pub fn from_image(image: ColorImage) -> Option<Self> {
        (image.width == image.height && image.width > 0).then(|| Self {
            image: image.clamp01(),
        })
    }

    pub fn resolution(&self) -> usize {
        self.image.width
    }

    pub fn image(&self) -> &ColorImage {
        &self.image
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.image.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.image.data
    }

    /// Continuous texel-space coordinates (centers at `i + 0.5`) of a UV point.
    #[inline]
    pub fn uv_to_texel(&self, uv: [f64; 2]) -> [f64; 2] {
        uv_to_texel(uv, self.resolution())
    }

    /// Bilinear lookup with edge clamping.
    pub fn sample_uv(&self, uv: [f64; 2]) -> Rgb {
        let [x, y] = self.uv_to_texel(uv);
        self.image.sample(x as f32, y as f32)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), CanvasError> {
        self.image.save_png(path)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Option<Self>, CanvasError> {
        Ok(Self::from_image(ColorImage::load_png(path)?))
    }
}

#[inline]
pub fn uv_to_texel(uv: [f64; 2], n: usize) -> [f64; 2] {
    let n = n as f64;
    [uv[0] * n, (1.0 - uv[1]) * n]
}

/// Index of the texel whose cell contains the UV point.
#[inline]
pub fn nearest_texel(uv: [f64; 2], n: usize) -> usize {
    let [x, y] = uv_to_texel(uv, n);
    let col = (x.floor().max(0.0) as usize).min(n - 1);
    let row = (y.floor().max(0.0) as usize).min(n - 1);
    row * n + col
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_centers_round_trip() {
        let n = 8;
        for row in 0..n {
            for col in 0..n {
                let uv = [(col as f64 + 0.5) / n as f64, 1.0 - (row as f64 + 0.5) / n as f64];
                assert_eq!(nearest_texel(uv, n), row * n + col);
            }
        }
    }

    #[test]
    fn non_square_images_are_rejected() {
        assert!(TextureAtlas::from_image(ColorImage::new(4, 3, [0.0; 3])).is_none());
    }
}
