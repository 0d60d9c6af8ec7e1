//! Deterministic z-buffered software rasterizer.
//!
//! Produces, per view, depth, current-color render, camera-space normal-z, UV
//! and face id per pixel, and the reverse mapping from atlas texels into a
//! view ([`render_in_uv_space`]) used to project painted views onto the atlas.
//!
//! Rows are rasterized in parallel bands. Every band walks the faces in index
//! order with a strict depth test, so the output is identical to a
//! single-threaded pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{uv_to_texel, TextureAtlas};
use crate::canvas::{bilinear_taps, ColorImage, Plane, Rgb};
use crate::mesh::Mesh;
use crate::Vec3;

pub const DEFAULT_RENDER_RESOLUTION: usize = 1200;
pub const DEFAULT_CAMERA_RADIUS: f64 = 1.25;
pub const DEFAULT_FOV_DEG: f64 = 60.0;
pub const NEAR_PLANE: f64 = 0.1;
pub const FAR_PLANE: f64 = 10.0;

/// Relative depth tolerance for UV-space visibility tests.
pub const VISIBILITY_BIAS: f64 = 1e-3;

/// Atlas texels within this distance (in texels) outside a UV triangle are
/// filled by extrapolating the triangle's plane, so bilinear lookups near
/// chart borders read meaningful values.
pub const UV_BLEED_TEXELS: f64 = 1.5;

const BAND_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    /// Camera distance from the origin.
    pub radius: f64,
    /// Azimuth in degrees; 0 looks from +z, 90 from +x.
    pub azimuth: f64,
    /// Elevation in degrees, positive above the xz plane.
    pub elevation: f64,
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub resolution: usize,
}

impl Viewpoint {
    pub fn new(radius: f64, azimuth: f64, elevation: f64) -> Self {
        Self {
            radius,
            azimuth,
            elevation,
            fov: DEFAULT_FOV_DEG,
            resolution: DEFAULT_RENDER_RESOLUTION,
        }
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn camera(&self) -> Camera {
        Camera::new(self)
    }
}

/// Look-at camera with an orthonormal basis; `back` points from the origin
/// toward the eye, so camera-space z of a front-facing normal is positive.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub eye: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub back: Vec3,
    tan_half: f64,
    size: f64,
}

impl Camera {
    pub fn new(view: &Viewpoint) -> Self {
        let (phi, theta) = (view.azimuth.to_radians(), view.elevation.to_radians());
        let dir = Vec3::new(theta.cos() * phi.sin(), theta.sin(), theta.cos() * phi.cos());
        let eye = dir * view.radius;
        let back = dir.normalize();
        // at the poles +y is parallel to the view axis; use the azimuth direction
        let up_hint = if theta.cos().abs() < 1e-9 {
            -Vec3::new(phi.sin(), 0.0, phi.cos()) * theta.sin().signum()
        } else {
            Vec3::y()
        };
        let right = up_hint.cross(&back).normalize();
        let up = back.cross(&right);
        Self {
            eye,
            right,
            up,
            back,
            tan_half: (view.fov.to_radians() * 0.5).tan(),
            size: view.resolution as f64,
        }
    }

    /// Screen position (pixel units, y down, centers at `i + 0.5`) and
    /// positive view depth. `None` behind the near plane.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let d = p - self.eye;
        let depth = -d.dot(&self.back);
        if depth < NEAR_PLANE {
            return None;
        }
        let x = d.dot(&self.right) / (depth * self.tan_half);
        let y = d.dot(&self.up) / (depth * self.tan_half);
        Some(((x + 1.0) * 0.5 * self.size, (1.0 - y) * 0.5 * self.size, depth))
    }

    #[inline]
    pub fn normal_z(&self, n: &Vec3) -> f64 {
        n.dot(&self.back)
    }
}

/// Per-pixel surface record; present only on foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub face: u32,
    /// Distance along the view axis.
    pub depth: f32,
    pub normal_z: f32,
    /// Interpolated UV; `[NaN, NaN]` when the mesh has no UVs.
    pub uv: [f32; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub resolution: usize,
    pub fragments: Vec<Option<Fragment>>,
    pub color: ColorImage,
}

/// Depth grid with explicit background cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<f32>>,
}

impl RenderOutput {
    #[inline]
    pub fn fragment(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.resolution + x].as_ref()
    }

    pub fn depth(&self, x: usize, y: usize) -> Option<f32> {
        self.fragment(x, y).map(|f| f.depth)
    }

    pub fn face_id(&self, x: usize, y: usize) -> Option<u32> {
        self.fragment(x, y).map(|f| f.face)
    }

    /// Camera-space normal z, 0 on background.
    pub fn normal_z(&self, x: usize, y: usize) -> f32 {
        self.fragment(x, y).map_or(0.0, |f| f.normal_z)
    }

    pub fn uv(&self, x: usize, y: usize) -> Option<[f32; 2]> {
        self.fragment(x, y).map(|f| f.uv)
    }

    pub fn is_foreground(&self, idx: usize) -> bool {
        self.fragments[idx].is_some()
    }

    pub fn foreground_count(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }

    pub fn depth_map(&self) -> DepthMap {
        DepthMap {
            width: self.resolution,
            height: self.resolution,
            data: self.fragments.iter().map(|f| f.map(|f| f.depth)).collect(),
        }
    }

    /// Foreground depth extent, `None` for an empty render.
    pub fn depth_range(&self) -> Option<(f32, f32)> {
        self.fragments.iter().flatten().fold(None, |acc, f| match acc {
            None => Some((f.depth, f.depth)),
            Some((lo, hi)) => Some((lo.min(f.depth), hi.max(f.depth))),
        })
    }

    /// Tight foreground bounding box `(x0, y0, x1, y1)`, exclusive upper bounds.
    pub fn foreground_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let n = self.resolution;
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for (i, f) in self.fragments.iter().enumerate() {
            if f.is_some() {
                let (x, y) = (i % n, i / n);
                bbox = Some(match bbox {
                    None => (x, y, x + 1, y + 1),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                });
            }
        }
        bbox
    }

    /// Writes depth, normal-z, color, uv and face-id rasters as 8-bit PNGs.
    pub fn save_debug(&self, dir: &std::path::Path) -> Result<(), crate::canvas::CanvasError> {
        std::fs::create_dir_all(dir)?;
        let n = self.resolution;
        let (lo, hi) = self.depth_range().unwrap_or((0.0, 1.0));
        let span = (hi - lo).max(1e-6);
        Plane::from_fn(n, n, |x, y| {
            self.depth(x, y).map_or(0.0, |d| 1.0 - 0.9 * (d - lo) / span)
        })
        .save_png(dir.join("depth.png"))?;
        Plane::from_fn(n, n, |x, y| self.normal_z(x, y)).save_png(dir.join("normal_z.png"))?;
        self.color.save_png(dir.join("color.png"))?;
        ColorImage::from_fn(n, n, |x, y| match self.uv(x, y) {
            Some(uv) if uv[0].is_finite() => [uv[0], uv[1], 0.0],
            _ => [0.0; 3],
        })
        .save_png(dir.join("uv.png"))?;
        ColorImage::from_fn(n, n, |x, y| match self.face_id(x, y) {
            Some(f) => {
                let h = (f as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                [
                    ((h >> 16) & 0xff) as f32 / 255.0,
                    ((h >> 24) & 0xff) as f32 / 255.0,
                    ((h >> 32) & 0xff) as f32 / 255.0,
                ]
            }
            None => [0.0; 3],
        })
        .save_png(dir.join("face_id.png"))?;
        Ok(())
    }
}

/// Screen-space setup of a front-facing triangle.
struct ScreenTri {
    face: u32,
    xy: [[f64; 2]; 3],
    inv_depth: [f64; 3],
    uv: [[f64; 2]; 3],
    normal_z: f32,
    area: f64,
    bbox: (i64, i64, i64, i64),
}

fn setup_triangles(mesh: &Mesh, cam: &Camera, size: usize) -> Vec<ScreenTri> {
    let uvs = mesh.uvs();
    (0..mesh.faces().len())
        .filter_map(|fi| {
            let p = mesh.face_positions(fi);
            let n = mesh.face_normal(fi);
            let nz = cam.normal_z(&n);
            if nz <= 0.0 || (cam.eye - p[0]).dot(&n) <= 0.0 {
                return None;
            }
            let mut xy = [[0.0; 2]; 3];
            let mut inv_depth = [0.0; 3];
            for k in 0..3 {
                let (sx, sy, d) = cam.project(&p[k])?;
                if d > FAR_PLANE {
                    return None;
                }
                xy[k] = [sx, sy];
                inv_depth[k] = 1.0 / d;
            }
            let area = edge(xy[0], xy[1], xy[2]);
            if area == 0.0 {
                return None;
            }
            let xs = xy.map(|v| v[0]);
            let ys = xy.map(|v| v[1]);
            let lo = |v: [f64; 3]| v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = |v: [f64; 3]| v.iter().cloned().fold(f64::MIN, f64::max);
            let bbox = (
                ((lo(xs) - 0.5).floor() as i64).max(0),
                ((lo(ys) - 0.5).floor() as i64).max(0),
                ((hi(xs) - 0.5).ceil() as i64).min(size as i64 - 1),
                ((hi(ys) - 0.5).ceil() as i64).min(size as i64 - 1),
            );
            Some(ScreenTri {
                face: fi as u32,
                xy,
                inv_depth,
                uv: uvs.map_or([[f64::NAN; 2]; 3], |u| u[fi]),
                normal_z: nz as f32,
                area,
                bbox,
            })
        })
        .collect()
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes the mesh; colors come from bilinear atlas lookups.
pub fn render(mesh: &Mesh, atlas: &TextureAtlas, view: &Viewpoint) -> RenderOutput {
    let size = view.resolution;
    let cam = view.camera();
    let tris = setup_triangles(mesh, &cam, size);
    let mut fragments: Vec<Option<Fragment>> = vec![None; size * size];

    fragments
        .par_chunks_mut(BAND_ROWS * size)
        .enumerate()
        .for_each(|(band, out)| {
            let y_lo = (band * BAND_ROWS) as i64;
            let y_hi = y_lo + (out.len() / size) as i64 - 1;
            let mut zbuf = vec![f64::INFINITY; out.len()];
            for t in &tris {
                let (x0, ty0, x1, ty1) = t.bbox;
                let (y0, y1) = (ty0.max(y_lo), ty1.min(y_hi));
                if y0 > y1 || x0 > x1 {
                    continue;
                }
                for y in y0..=y1 {
                    let py = y as f64 + 0.5;
                    for x in x0..=x1 {
                        let p = [x as f64 + 0.5, py];
                        let w0 = edge(t.xy[1], t.xy[2], p) / t.area;
                        let w1 = edge(t.xy[2], t.xy[0], p) / t.area;
                        let w2 = edge(t.xy[0], t.xy[1], p) / t.area;
                        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                            continue;
                        }
                        let q = [w0 * t.inv_depth[0], w1 * t.inv_depth[1], w2 * t.inv_depth[2]];
                        let inv = q[0] + q[1] + q[2];
                        let depth = 1.0 / inv;
                        let local = ((y - y_lo) as usize) * size + x as usize;
                        if depth < zbuf[local] {
                            zbuf[local] = depth;
                            let b = q.map(|v| v / inv);
                            let uv = [
                                (b[0] * t.uv[0][0] + b[1] * t.uv[1][0] + b[2] * t.uv[2][0]) as f32,
                                (b[0] * t.uv[0][1] + b[1] * t.uv[1][1] + b[2] * t.uv[2][1]) as f32,
                            ];
                            out[local] = Some(Fragment {
                                face: t.face,
                                depth: depth as f32,
                                normal_z: t.normal_z,
                                uv,
                            });
                        }
                    }
                }
            }
        });

    let color_data: Vec<Rgb> = fragments
        .par_iter()
        .map(|f| match f {
            Some(f) if f.uv[0].is_finite() => atlas.sample_uv([f.uv[0] as f64, f.uv[1] as f64]),
            _ => [0.0; 3],
        })
        .collect();
    RenderOutput {
        resolution: size,
        fragments,
        color: ColorImage {
            width: size,
            height: size,
            data: color_data,
        },
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("depth map has no foreground pixels")]
    EmptyForeground,
}

/// Linear remap of foreground depth so the nearest point is 1 and the
/// farthest is 0 (a constant field maps to 1); background is 0. The result is
/// nearest-resampled to `out_size` squared. `invert` flips the foreground
/// convention for backends that expect far = 1.
pub fn depth_to_conditioning(depth: &DepthMap, out_size: usize, invert: bool) -> Result<Plane, DepthError> {
    let (lo, hi) = depth
        .data
        .iter()
        .flatten()
        .fold(None, |acc: Option<(f32, f32)>, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
        .ok_or(DepthError::EmptyForeground)?;
    let span = hi - lo;
    let remap = |d: f32| -> f32 {
        let v = if span > 0.0 { (hi - d) / span } else { 1.0 };
        if invert {
            1.0 - v
        } else {
            v
        }
    };
    Ok(Plane::from_fn(out_size, out_size, |x, y| {
        let sx = ((x * depth.width) / out_size).min(depth.width - 1);
        let sy = ((y * depth.height) / out_size).min(depth.height - 1);
        depth.data[sy * depth.width + sx].map_or(0.0, remap)
    }))
}

/// One atlas texel as seen from a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelHit {
    pub face: u32,
    /// Color sampled from the screen image at the texel's projected position.
    pub color: Rgb,
    /// Projected position of the texel's surface point (pixel units).
    pub screen: [f32; 2],
    /// Pixel owning the texel, and the mask value there.
    pub pixel: usize,
    pub mask: f32,
    pub normal_z: f32,
    /// True when the texel center lies inside its UV triangle rather than in
    /// the extrapolated bleed band.
    pub interior: bool,
}

/// Atlas-space image of a screen-space view. `None` texels are uncovered,
/// back-facing or occluded.
#[derive(Debug, Clone)]
pub struct UvProjection {
    pub resolution: usize,
    pub texels: Vec<Option<TexelHit>>,
}

impl UvProjection {
    /// Visible and inside the mask.
    pub fn is_valid(&self, idx: usize) -> bool {
        self.texels[idx].is_some_and(|h| h.mask > 0.5)
    }

    pub fn partial_image(&self) -> ColorImage {
        let n = self.resolution;
        ColorImage {
            width: n,
            height: n,
            data: self.texels.iter().map(|t| t.map_or([0.0; 3], |h| h.color)).collect(),
        }
    }

    pub fn validity(&self) -> Vec<bool> {
        (0..self.texels.len()).map(|i| self.is_valid(i)).collect()
    }
}

/// Pixel owning a screen position: the nearest pixel when it is foreground,
/// else the heaviest foreground bilinear tap.
pub fn owning_pixel(render: &RenderOutput, x: f32, y: f32) -> Option<usize> {
    let n = render.resolution;
    let (px, py) = (x.floor() as i64, y.floor() as i64);
    if px >= 0 && py >= 0 && (px as usize) < n && (py as usize) < n {
        let i = py as usize * n + px as usize;
        if render.is_foreground(i) {
            return Some(i);
        }
    }
    bilinear_taps(x, y, n, n)
        .iter()
        .filter(|(i, w)| *w > 0.0 && render.is_foreground(*i))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| *i)
}

/// Maps every atlas texel covered by a front-facing, visible triangle back
/// into the view and samples `image` and `mask` there.
///
/// Visibility is tested at the nearest point of the texel's triangle: the
/// texel is occluded only when all four pixels around its projection are
/// foreground and nearer than it by more than the depth bias.
pub fn render_in_uv_space(
    mesh: &Mesh,
    view: &Viewpoint,
    render: &RenderOutput,
    image: &ColorImage,
    mask: &Plane,
    atlas_resolution: usize,
) -> UvProjection {
    let n = atlas_resolution;
    let size = view.resolution;
    assert_eq!(render.resolution, size, "render must come from the same view");
    assert_eq!(image.width, size, "image must match the view resolution");
    let Some(uvs) = mesh.uvs() else {
        return UvProjection {
            resolution: n,
            texels: vec![None; n * n],
        };
    };
    let cam = view.camera();
    let bias = render
        .depth_range()
        .map_or(0.0, |(lo, hi)| VISIBILITY_BIAS * (hi - lo).max(1e-6) as f64);

    struct UvTri {
        face: u32,
        texel: [[f64; 2]; 3],
        pos: [Vec3; 3],
        normal_z: f32,
        area: f64,
        edge_len: [f64; 3],
        bbox: (i64, i64, i64, i64),
    }
    let tris: Vec<UvTri> = (0..mesh.faces().len())
        .filter_map(|fi| {
            let pos = mesh.face_positions(fi);
            let nrm = mesh.face_normal(fi);
            let nz = cam.normal_z(&nrm);
            if nz <= 0.0 || (cam.eye - pos[0]).dot(&nrm) <= 0.0 {
                return None;
            }
            let texel = uvs[fi].map(|uv| uv_to_texel(uv, n));
            let area = edge(texel[0], texel[1], texel[2]);
            if area.abs() < 1e-12 {
                return None;
            }
            let len = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let edge_len = [
                len(texel[1], texel[2]),
                len(texel[2], texel[0]),
                len(texel[0], texel[1]),
            ];
            let pad = UV_BLEED_TEXELS + 1.0;
            let xs = texel.map(|v| v[0]);
            let ys = texel.map(|v| v[1]);
            let lo = |v: [f64; 3]| v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = |v: [f64; 3]| v.iter().cloned().fold(f64::MIN, f64::max);
            let bbox = (
                ((lo(xs) - pad).floor() as i64).max(0),
                ((lo(ys) - pad).floor() as i64).max(0),
                ((hi(xs) + pad).ceil() as i64).min(n as i64 - 1),
                ((hi(ys) + pad).ceil() as i64).min(n as i64 - 1),
            );
            Some(UvTri {
                face: fi as u32,
                texel,
                pos,
                normal_z: nz as f32,
                area,
                edge_len,
                bbox,
            })
        })
        .collect();

    let mut texels: Vec<Option<TexelHit>> = vec![None; n * n];
    texels
        .par_chunks_mut(BAND_ROWS * n)
        .enumerate()
        .for_each(|(band, out)| {
            let y_lo = (band * BAND_ROWS) as i64;
            let y_hi = y_lo + (out.len() / n) as i64 - 1;
            let mut score = vec![f64::NEG_INFINITY; out.len()];
            for t in &tris {
                let (x0, ty0, x1, ty1) = t.bbox;
                let (y0, y1) = (ty0.max(y_lo), ty1.min(y_hi));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let p = [x as f64 + 0.5, y as f64 + 0.5];
                        let e = [
                            edge(t.texel[1], t.texel[2], p),
                            edge(t.texel[2], t.texel[0], p),
                            edge(t.texel[0], t.texel[1], p),
                        ];
                        let b = e.map(|v| v / t.area);
                        // signed distance to each edge in texels, positive inside
                        let dist = (0..3)
                            .map(|k| b[k] * t.area.abs() / t.edge_len[k].max(1e-12))
                            .fold(f64::INFINITY, f64::min);
                        if dist < -UV_BLEED_TEXELS {
                            continue;
                        }
                        let local = ((y - y_lo) as usize) * n + x as usize;
                        if dist <= score[local] {
                            continue;
                        }
                        let surface = t.pos[0] * b[0] + t.pos[1] * b[1] + t.pos[2] * b[2];
                        let clamped = {
                            let c = b.map(|v| v.max(0.0));
                            let s = c[0] + c[1] + c[2];
                            t.pos[0] * (c[0] / s) + t.pos[1] * (c[1] / s) + t.pos[2] * (c[2] / s)
                        };
                        let Some((cx, cy, cd)) = cam.project(&clamped) else {
                            continue;
                        };
                        let Some((sx, sy, _)) = cam.project(&surface) else {
                            continue;
                        };
                        if cx < 0.0 || cy < 0.0 || cx >= size as f64 || cy >= size as f64 {
                            continue;
                        }
                        let occluded = bilinear_taps(cx as f32, cy as f32, size, size)
                            .iter()
                            .all(|&(i, _)| {
                                render.fragments[i].is_some_and(|f| (f.depth as f64) < cd - bias)
                            });
                        if occluded {
                            continue;
                        }
                        let Some(pixel) = owning_pixel(render, cx as f32, cy as f32) else {
                            continue;
                        };
                        let fg = |i: usize| render.is_foreground(i);
                        let (sxf, syf) = (sx as f32, sy as f32);
                        // bleed points past a silhouette fall back to the triangle itself
                        let on_object = bilinear_taps(sxf, syf, size, size)
                            .iter()
                            .any(|&(i, w)| w > 0.0 && fg(i));
                        let color = if on_object {
                            image.sample_where(sxf, syf, fg)
                        } else {
                            image.sample_where(cx as f32, cy as f32, fg)
                        };
                        score[local] = dist;
                        out[local] = Some(TexelHit {
                            face: t.face,
                            color,
                            screen: [sxf, syf],
                            pixel,
                            mask: mask.data[pixel],
                            normal_z: t.normal_z,
                            interior: dist >= 0.0,
                        });
                    }
                }
            }
        });
    UvProjection {
        resolution: n,
        texels,
    }
}
