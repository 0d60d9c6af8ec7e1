//! Meta-texture cache, per-view keep/refine/generate partition and the masks
//! derived from it.

use serde::{Deserialize, Serialize};

use crate::atlas::nearest_texel;
use crate::canvas::{convolve_separable, gaussian_kernel, ColorImage, Plane};
use crate::render::{RenderOutput, UvProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Keep = 1,
    Refine = 2,
    Generate = 3,
}

impl Label {
    /// Visualization color: keep green, refine blue, generate red.
    pub fn color(self) -> [f32; 3] {
        match self {
            Label::Background => [0.0, 0.0, 0.0],
            Label::Keep => [0.0, 1.0, 0.0],
            Label::Refine => [0.0, 0.0, 1.0],
            Label::Generate => [1.0, 0.0, 0.0],
        }
    }

    pub fn is_paint(self) -> bool {
        matches!(self, Label::Refine | Label::Generate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl Trimap {
    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Majority vote over `factor` by `factor` blocks. Ties prefer refine,
    /// then generate, keep, background.
    pub fn downsample(&self, factor: usize) -> Trimap {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut labels = Vec::with_capacity(w * h);
        for by in 0..h {
            for bx in 0..w {
                let mut counts = [0usize; 4];
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        counts[self.get(x, y) as usize] += 1;
                    }
                }
                let top = *counts.iter().max().unwrap();
                let chosen = [Label::Refine, Label::Generate, Label::Keep, Label::Background]
                    .into_iter()
                    .find(|&l| counts[l as usize] == top)
                    .unwrap();
                labels.push(chosen);
            }
        }
        Trimap {
            width: w,
            height: h,
            labels,
        }
    }

    /// Nearest-neighbor resample.
    pub fn resize(&self, width: usize, height: usize) -> Trimap {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let sx = ((x * self.width) / width).min(self.width - 1);
                let sy = ((y * self.height) / height).min(self.height - 1);
                labels.push(self.get(sx, sy));
            }
        }
        Trimap {
            width,
            height,
            labels,
        }
    }

    pub fn visualize(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|l| l.color()).collect(),
        }
    }

    /// Inverse of [`Trimap::visualize`]; `None` if a pixel is not a label color.
    pub fn from_visualization(image: &ColorImage) -> Option<Trimap> {
        let all = [Label::Background, Label::Keep, Label::Refine, Label::Generate];
        let labels = image
            .data
            .iter()
            .map(|c| all.into_iter().find(|l| l.color() == *c))
            .collect::<Option<Vec<_>>>()?;
        Some(Trimap {
            width: image.width,
            height: image.height,
            labels,
        })
    }
}

/// Per-texel record of the best camera-space normal z each texel was painted at.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTexture {
    pub resolution: usize,
    pub best_nz: Vec<f32>,
    pub painted: Vec<bool>,
}

const META_MAGIC: &[u8; 8] = b"TXMETA01";

#[derive(Debug, thiserror::Error)]
pub enum MetaFormatError {
    #[error("meta file shorter than its header")]
    Truncated,
    #[error("bad meta magic")]
    BadMagic,
    #[error("meta payload has {got} bytes, expected {expected}")]
    Length { got: usize, expected: usize },
}

impl MetaTexture {
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            best_nz: vec![0.0; resolution * resolution],
            painted: vec![false; resolution * resolution],
        }
    }

    /// Every texel painted but with no angle credit, so any visible view refines.
    pub fn all_painted(resolution: usize) -> Self {
        Self {
            resolution,
            best_nz: vec![0.0; resolution * resolution],
            painted: vec![true; resolution * resolution],
        }
    }

    pub fn painted_fraction(&self) -> f64 {
        self.painted.iter().filter(|&&p| p).count() as f64 / self.painted.len().max(1) as f64
    }

    /// `TXMETA01`, u32 width, u32 height (little-endian), then row-major f32 `best_nz`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.best_nz.len());
        out.extend_from_slice(META_MAGIC);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for v in &self.best_nz {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); texels with positive `best_nz` are painted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MetaFormatError> {
        if bytes.len() < 16 {
            return Err(MetaFormatError::Truncated);
        }
        if &bytes[..8] != META_MAGIC {
            return Err(MetaFormatError::BadMagic);
        }
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + 4 * w * h;
        if bytes.len() != expected || w != h {
            return Err(MetaFormatError::Length {
                got: bytes.len(),
                expected,
            });
        }
        let best_nz: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let painted = best_nz.iter().map(|&v| v > 0.0).collect();
        Ok(Self {
            resolution: w,
            best_nz,
            painted,
        })
    }
}

/// Meta-texture as seen through one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaSample {
    pub painted: bool,
    pub best_nz: f32,
}

/// Nearest-texel lookup of the meta texture at every foreground pixel.
pub fn render_meta(render: &RenderOutput, meta: &MetaTexture) -> Vec<Option<MetaSample>> {
    render
        .fragments
        .iter()
        .map(|f| {
            f.and_then(|f| {
                f.uv[0].is_finite().then(|| {
                    let t = nearest_texel([f.uv[0] as f64, f.uv[1] as f64], meta.resolution);
                    MetaSample {
                        painted: meta.painted[t],
                        best_nz: meta.best_nz[t],
                    }
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimapConfig {
    /// Refine only when the current view beats the cached angle by this much.
    pub refine_margin: f32,
}

impl Default for TrimapConfig {
    fn default() -> Self {
        Self { refine_margin: 0.1 }
    }
}

/// Generate where unpainted; on painted pixels refine when the current
/// normal z exceeds the cached best by the margin, keep otherwise.
pub fn compute_trimap(render: &RenderOutput, meta_view: &[Option<MetaSample>], cfg: &TrimapConfig) -> Trimap {
    let labels = render
        .fragments
        .iter()
        .zip(meta_view)
        .map(|(f, m)| match (f, m) {
            (None, _) => Label::Background,
            (Some(_), None) => Label::Generate,
            (Some(_), Some(m)) if !m.painted => Label::Generate,
            (Some(f), Some(m)) => {
                if f.normal_z > m.best_nz + cfg.refine_margin {
                    Label::Refine
                } else {
                    Label::Keep
                }
            }
        })
        .collect();
    Trimap {
        width: render.resolution,
        height: render.resolution,
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Refine cells follow the checkerboard for steps `i <= refine_cutoff`.
    pub refine_cutoff: usize,
    /// Checkerboard cell size in latent cells.
    pub checker_period: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            refine_cutoff: 25,
            checker_period: 2,
        }
    }
}

/// Binary latent mask: `true` cells are denoised freely, `false` cells are
/// overwritten with the noised current render.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    pub width: usize,
    pub height: usize,
    pub free: Vec<bool>,
}

impl LatentMask {
    pub fn popcount(&self) -> usize {
        self.free.iter().filter(|&&b| b).count()
    }
}

/// Checkerboard phase: cell `(0, 0)` is free.
#[inline]
pub fn checkerboard(x: usize, y: usize, period: usize) -> bool {
    let p = period.max(1);
    (x / p + y / p) % 2 == 0
}

/// Blend mask for sampling step `step` on a latent-resolution trimap.
///
/// Keep and background cells are frozen; generate is free; refine follows the
/// checkerboard up to and including the cutoff step and is free afterwards.
pub fn realize_blend_mask(latent: &Trimap, step: usize, cfg: &BlendConfig) -> LatentMask {
    let free = latent
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Label::Keep | Label::Background => false,
            Label::Generate => true,
            Label::Refine => {
                step > cfg.refine_cutoff
                    || checkerboard(i % latent.width, i / latent.width, cfg.checker_period)
            }
        })
        .collect();
    LatentMask {
        width: latent.width,
        height: latent.height,
        free,
    }
}

/// Latent inpainting mask: the generate cells.
pub fn generate_mask(latent: &Trimap) -> LatentMask {
    LatentMask {
        width: latent.width,
        height: latent.height,
        free: latent.labels.iter().map(|&l| l == Label::Generate).collect(),
    }
}

/// 1 on refine and generate, 0 on keep and background.
pub fn hard_mask(trimap: &Trimap) -> Plane {
    Plane {
        width: trimap.width,
        height: trimap.height,
        data: trimap
            .labels
            .iter()
            .map(|l| if l.is_paint() { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// Gaussian-blurred hard mask. The blur is normalized over foreground pixels
/// only, so the silhouette does not pull the weight down; background pixels
/// receive the same normalized average of their foreground neighborhood.
pub fn soft_projection_mask(trimap: &Trimap, sigma: f32) -> Plane {
    let hard = hard_mask(trimap);
    if sigma <= 0.0 {
        return hard;
    }
    let fg = Plane {
        width: trimap.width,
        height: trimap.height,
        data: trimap
            .labels
            .iter()
            .map(|&l| if l == Label::Background { 0.0 } else { 1.0 })
            .collect(),
    };
    let kernel = gaussian_kernel(sigma);
    let num = convolve_separable(&hard, &kernel);
    let den = convolve_separable(&fg, &kernel);
    let floor = 1e-6 * kernel.iter().sum::<f32>().powi(2);
    Plane {
        width: trimap.width,
        height: trimap.height,
        data: num
            .data
            .iter()
            .zip(&den.data)
            .map(|(&n, &d)| if d > floor { (n / d).clamp(0.0, 1.0) } else { 0.0 })
            .collect(),
    }
}

/// Marks texels painted through this view (valid in the projection, which was
/// computed against the hard mask) and raises their cached normal z.
pub fn update_meta(meta: &mut MetaTexture, projection: &UvProjection) {
    assert_eq!(meta.resolution, projection.resolution);
    for (i, hit) in projection.texels.iter().enumerate() {
        if let Some(h) = hit {
            if h.mask > 0.5 {
                meta.painted[i] = true;
                meta.best_nz[i] = meta.best_nz[i].max(h.normal_z);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_ties_prefer_refine() {
        let t = Trimap {
            width: 2,
            height: 2,
            labels: vec![Label::Keep, Label::Refine, Label::Refine, Label::Keep],
        };
        assert_eq!(t.downsample(2).labels, vec![Label::Refine]);
        let t = Trimap {
            width: 2,
            height: 2,
            labels: vec![Label::Keep, Label::Generate, Label::Generate, Label::Keep],
        };
        assert_eq!(t.downsample(2).labels, vec![Label::Generate]);
        let t = Trimap {
            width: 2,
            height: 2,
            labels: vec![Label::Keep, Label::Keep, Label::Keep, Label::Generate],
        };
        assert_eq!(t.downsample(2).labels, vec![Label::Keep]);
    }

    #[test]
    fn all_keep_mask_is_zero() {
        let t = Trimap::filled(8, 8, Label::Keep);
        for step in [0, 10, 25, 26, 49] {
            assert_eq!(realize_blend_mask(&t, step, &BlendConfig::default()).popcount(), 0);
        }
    }

    #[test]
    fn all_refine_after_cutoff_is_one() {
        let t = Trimap::filled(8, 8, Label::Refine);
        assert_eq!(realize_blend_mask(&t, 30, &BlendConfig::default()).popcount(), 64);
    }

    #[test]
    fn refine_checkerboard_blocks() {
        let t = Trimap::filled(8, 8, Label::Refine);
        let m = realize_blend_mask(&t, 10, &BlendConfig::default());
        assert_eq!(m.popcount(), 32);
        let row = |y: usize| (0..8).map(|x| m.free[y * 8 + x] as u8).collect::<Vec<_>>();
        assert_eq!(row(0), vec![1, 1, 0, 0, 1, 1, 0, 0]);
        assert_eq!(row(1), row(0));
        assert_eq!(row(2), vec![0, 0, 1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn meta_round_trips_through_bytes() {
        let mut m = MetaTexture::new(3);
        m.best_nz[4] = 0.75;
        m.painted[4] = true;
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"TXMETA01");
        assert_eq!(bytes.len(), 16 + 36);
        assert_eq!(MetaTexture::from_bytes(&bytes).unwrap(), m);
        assert!(matches!(MetaTexture::from_bytes(&bytes[..10]), Err(MetaFormatError::Truncated)));
    }

    #[test]
    fn soft_mask_of_keep_is_zero() {
        let t = Trimap::filled(40, 40, Label::Keep);
        assert!(soft_projection_mask(&t, 3.0).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_mask_of_generate_is_one() {
        let mut t = Trimap::filled(60, 60, Label::Background);
        for y in 5..55 {
            for x in 5..55 {
                t.labels[y * 60 + x] = Label::Generate;
            }
        }
        let m = soft_projection_mask(&t, 3.0);
        for y in 5..55 {
            for x in 5..55 {
                assert!((m.get(x, y) - 1.0).abs() < 1e-6);
            }
        }
    }
}
