//! Blending a painted view back into the atlas.

use crate::atlas::TextureAtlas;
use crate::canvas::{ColorImage, Plane};
use crate::mesh::Mesh;
use crate::render::{render_in_uv_space, RenderOutput, UvProjection, Viewpoint};
use crate::trimap::{hard_mask, Trimap};

pub const GUTTER_BLEED_TEXELS: usize = 2;

/// Per-view projection summary.
#[derive(Debug, Clone)]
pub struct Projected {
    pub projection: UvProjection,
    /// Texels written with a positive weight.
    pub written: usize,
}

/// Projects `image` (at render resolution) into the atlas.
///
/// A texel takes part when it is visible from the view and its owning pixel is
/// refine or generate in `trimap`. Its blend weight is `soft` at that owning
/// pixel, and the new color is
/// `(1 - w) * old + w * image`. All other texels are left untouched.
pub fn project_view(
    atlas: &mut TextureAtlas,
    mesh: &Mesh,
    view: &Viewpoint,
    render: &RenderOutput,
    image: &ColorImage,
    trimap: &Trimap,
    soft: &Plane,
) -> Projected {
    let hard = hard_mask(trimap);
    let projection = render_in_uv_space(mesh, view, render, image, &hard, atlas.resolution());
    let mut written = 0;
    for (i, texel) in atlas.pixels_mut().iter_mut().enumerate() {
        let Some(hit) = projection.texels[i] else {
            continue;
        };
        if hit.mask <= 0.5 {
            continue;
        }
        let w = soft.data[hit.pixel].clamp(0.0, 1.0);
        if w <= 0.0 {
            continue;
        }
        for c in 0..3 {
            texel[c] = ((1.0 - w) * texel[c] + w * hit.color[c]).clamp(0.0, 1.0);
        }
        written += 1;
    }
    Projected { projection, written }
}

/// Extends painted texels into their unpainted neighbors, one ring per pass.
/// Each new texel takes the mean of its already-covered 8-neighbors.
pub fn bleed_gutter(atlas: &mut TextureAtlas, covered: &[bool], rings: usize) {
    let n = atlas.resolution();
    assert_eq!(covered.len(), n * n);
    let mut covered = covered.to_vec();
    for _ in 0..rings {
        let src = atlas.pixels().to_vec();
        let mut grown = covered.clone();
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                if covered[i] {
                    continue;
                }
                let mut sum = [0.0f32; 3];
                let mut count = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= n as i64 || ny >= n as i64 {
                            continue;
                        }
                        let j = ny as usize * n + nx as usize;
                        if covered[j] {
                            for c in 0..3 {
                                sum[c] += src[j][c];
                            }
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    atlas.pixels_mut()[i] = sum.map(|s| s / count as f32);
                    grown[i] = true;
                }
            }
        }
        covered = grown;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{naive_uv_chart, shapes};
    use crate::render::render;
    use crate::trimap::Label;

    fn setup() -> (Mesh, Viewpoint, TextureAtlas, RenderOutput) {
        let mesh = shapes::cube(0.35);
        let mesh = naive_uv_chart(&mesh, 64).unwrap();
        let view = Viewpoint::new(1.25, 30.0, 20.0).with_resolution(96);
        let atlas = TextureAtlas::new(64, [0.2, 0.3, 0.4]);
        let r = render(&mesh, &atlas, &view);
        (mesh, view, atlas, r)
    }

    fn trimap_of(r: &RenderOutput, label: Label) -> Trimap {
        let n = r.resolution;
        Trimap {
            width: n,
            height: n,
            labels: (0..n * n)
                .map(|i| if r.is_foreground(i) { label } else { Label::Background })
                .collect(),
        }
    }

    #[test]
    fn full_weight_writes_the_image_exactly() {
        let (mesh, view, mut atlas, r) = setup();
        let green = ColorImage::new(96, 96, [0.0, 1.0, 0.0]);
        let t = trimap_of(&r, Label::Generate);
        let soft = Plane::new(96, 96, 1.0);
        let out = project_view(&mut atlas, &mesh, &view, &r, &green, &t, &soft);
        assert!(out.written > 100);
        for (i, p) in atlas.pixels().iter().enumerate() {
            if out.projection.is_valid(i) {
                assert_eq!(*p, [0.0, 1.0, 0.0]);
            } else {
                assert_eq!(*p, [0.2, 0.3, 0.4]);
            }
        }
    }

    #[test]
    fn all_keep_leaves_the_atlas_alone() {
        let (mesh, view, mut atlas, r) = setup();
        let before = atlas.clone();
        let img = ColorImage::new(96, 96, [1.0, 0.0, 0.0]);
        let t = trimap_of(&r, Label::Keep);
        let soft = Plane::new(96, 96, 1.0);
        let out = project_view(&mut atlas, &mesh, &view, &r, &img, &t, &soft);
        assert_eq!(out.written, 0);
        assert_eq!(atlas, before);
    }

    #[test]
    fn bleed_grows_two_rings() {
        let mut atlas = TextureAtlas::new(7, [0.0; 3]);
        atlas.pixels_mut()[3 * 7 + 3] = [1.0; 3];
        let mut covered = vec![false; 49];
        covered[3 * 7 + 3] = true;
        bleed_gutter(&mut atlas, &covered, 2);
        assert_eq!(atlas.pixels()[1 * 7 + 1], [1.0; 3]);
        assert_eq!(atlas.pixels()[0], [0.0; 3]);
    }
}
