//! Cropping a view to the backend's square input and back.

use serde::{Deserialize, Serialize};

use crate::canvas::{ColorImage, Plane};
use crate::render::{depth_to_conditioning, DepthError, DepthMap, RenderOutput};
use crate::trimap::{Label, Trimap};

/// Square window of the render, in render pixels. May extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    /// Output side length.
    pub size: usize,
}

impl Crop {
    /// Tight foreground square grown by `margin` of its side on every edge.
    pub fn around_foreground(render: &RenderOutput, margin: f64, size: usize) -> Option<Self> {
        let (x0, y0, x1, y1) = render.foreground_bbox()?;
        let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
        let side = w.max(h) * (1.0 + 2.0 * margin);
        let (cx, cy) = ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0);
        Some(Self {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            side,
            size,
        })
    }

    /// Render pixel under the center of crop pixel `(x, y)`, if inside the render.
    pub fn source_pixel(&self, x: usize, y: usize, resolution: usize) -> Option<usize> {
        let s = self.side / self.size as f64;
        let sx = (self.x0 + (x as f64 + 0.5) * s).floor();
        let sy = (self.y0 + (y as f64 + 0.5) * s).floor();
        let n = resolution as f64;
        (sx >= 0.0 && sy >= 0.0 && sx < n && sy < n).then(|| sy as usize * resolution + sx as usize)
    }

    /// Continuous crop coordinates of a render position.
    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.size as f64 / self.side;
        ((x - self.x0) * s, (y - self.y0) * s)
    }
}

/// Backend-resolution inputs for one view.
#[derive(Debug, Clone)]
pub struct MattedView {
    pub crop: Crop,
    /// Current render composited over the background plate.
    pub image: ColorImage,
    pub trimap: Trimap,
    pub depth: Plane,
}

/// Crops the render to `crop` with nearest sampling and composites the
/// foreground over `plate`.
pub fn mat_view(
    render: &RenderOutput,
    trimap: &Trimap,
    crop: Crop,
    plate: &ColorImage,
    depth_invert: bool,
) -> Result<MattedView, DepthError> {
    let n = render.resolution;
    let size = crop.size;
    assert_eq!((plate.width, plate.height), (size, size), "plate must match the crop size");
    let src: Vec<Option<usize>> = (0..size * size)
        .map(|i| crop.source_pixel(i % size, i / size, n).filter(|&s| render.is_foreground(s)))
        .collect();
    let image = ColorImage {
        width: size,
        height: size,
        data: src
            .iter()
            .enumerate()
            .map(|(i, s)| s.map_or(plate.data[i], |s| render.color.data[s]))
            .collect(),
    };
    let trimap = Trimap {
        width: size,
        height: size,
        labels: src
            .iter()
            .map(|s| s.map_or(Label::Background, |s| trimap.labels[s]))
            .collect(),
    };
    let depth_map = DepthMap {
        width: size,
        height: size,
        data: src.iter().map(|s| s.and_then(|s| render.fragments[s].map(|f| f.depth))).collect(),
    };
    let depth = depth_to_conditioning(&depth_map, size, depth_invert)?;
    Ok(MattedView {
        crop,
        image,
        trimap,
        depth,
    })
}

/// Maps a generated crop back to render resolution. Foreground pixels sample
/// the crop bilinearly using only foreground crop pixels; background is black.
pub fn unmat(generated: &ColorImage, matted: &MattedView, render: &RenderOutput) -> ColorImage {
    let n = render.resolution;
    let fg = |i: usize| matted.trimap.labels[i] != Label::Background;
    ColorImage::from_fn(n, n, |x, y| {
        if !render.is_foreground(y * n + x) {
            return [0.0; 3];
        }
        let (cx, cy) = matted.crop.to_crop(x as f64 + 0.5, y as f64 + 0.5);
        generated.sample_where(cx as f32, cy as f32, fg)
    })
}
