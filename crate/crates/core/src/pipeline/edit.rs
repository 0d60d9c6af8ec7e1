use std::path::Path;

use super::{paint_views, Labeling, PipelineError, RunConfig, RunDir, TextureOutput};
use crate::atlas::TextureAtlas;
use crate::mesh::Mesh;
use crate::sampler::DenoiserBackend;
use crate::trimap::MetaTexture;

/// Per-channel difference above which a texel counts as edited.
pub const SCRIBBLE_THRESHOLD: f32 = 4.0 / 255.0;
pub const SCRIBBLE_DILATION: usize = 3;

/// Repaints an existing atlas under a new prompt.
///
/// The meta texture is reset to painted with a cached normal z of 0, so every
/// pixel facing the camera more than the refine margin is refined once and the
/// grazing rim is kept.
pub fn edit_with_text<B: DenoiserBackend + ?Sized>(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    cfg: &RunConfig,
    backend: &mut B,
    out: Option<&Path>,
) -> Result<TextureOutput, PipelineError> {
    cfg.validate()?;
    let mut atlas = atlas.clone();
    let mut meta = MetaTexture::all_painted(atlas.resolution());
    let dir = out.map(|p| RunDir::create(p, cfg)).transpose()?;
    let views = paint_views(mesh, &mut atlas, &mut meta, cfg, Labeling::Meta, backend, dir.as_ref())?;
    if let Some(dir) = &dir {
        dir.write_final(&atlas, &meta)?;
    }
    Ok(TextureOutput { atlas, meta, views })
}

/// Texels where the atlases differ by more than the threshold in any channel,
/// dilated by a square of radius `dilation`.
pub fn scribble_mask(original: &TextureAtlas, edited: &TextureAtlas, dilation: usize) -> Vec<bool> {
    let n = original.resolution();
    let diff: Vec<bool> = original
        .pixels()
        .iter()
        .zip(edited.pixels())
        .map(|(a, b)| (0..3).any(|c| (a[c] - b[c]).abs() > SCRIBBLE_THRESHOLD))
        .collect();
    let r = dilation as i64;
    // separable max filter: rows, then columns
    let mut rows = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let lo = (x as i64 - r).max(0) as usize;
            let hi = (x as i64 + r).min(n as i64 - 1) as usize;
            rows[y * n + x] = diff[y * n + lo..=y * n + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; n * n];
    for y in 0..n {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = (y as i64 + r).min(n as i64 - 1) as usize;
        for x in 0..n {
            out[y * n + x] = (lo..=hi).any(|yy| rows[yy * n + x]);
        }
    }
    out
}

/// Blends a hand edit into the texture: edited regions are refined, the rest
/// is kept. Views that see no edited texel are skipped.
pub fn edit_with_scribble<B: DenoiserBackend + ?Sized>(
    mesh: &Mesh,
    original: &TextureAtlas,
    edited: &TextureAtlas,
    cfg: &RunConfig,
    backend: &mut B,
    out: Option<&Path>,
) -> Result<TextureOutput, PipelineError> {
    cfg.validate()?;
    if original.resolution() != edited.resolution() {
        return Err(PipelineError::ResolutionMismatch(original.resolution(), edited.resolution()));
    }
    let mask = scribble_mask(original, edited, SCRIBBLE_DILATION);
    let mut atlas = edited.clone();
    let mut meta = MetaTexture::all_painted(atlas.resolution());
    let dir = out.map(|p| RunDir::create(p, cfg)).transpose()?;
    let views = if mask.iter().any(|&b| b) {
        paint_views(
            mesh,
            &mut atlas,
            &mut meta,
            cfg,
            Labeling::Scribble(&mask),
            backend,
            dir.as_ref(),
        )?
    } else {
        Vec::new()
    };
    if let Some(dir) = &dir {
        dir.write_final(&atlas, &meta)?;
    }
    Ok(TextureOutput { atlas, meta, views })
}
