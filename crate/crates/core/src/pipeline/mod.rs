//! The painting loop, editing modes and transfer dataset preparation.
//!
//! Views are painted strictly in order. Each one renders the mesh with the
//! current atlas, labels every pixel from the meta texture, crops and mats the
//! object for the backend, samples, and projects the result back.

mod config;
mod dataset;
mod edit;
mod matting;
mod rundir;

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::{nearest_texel, TextureAtlas};
use crate::canvas::{CanvasError, ColorImage};
use crate::mesh::{Mesh, MeshError};
use crate::projection::{bleed_gutter, project_view};
use crate::render::{render, RenderOutput, Viewpoint};
use crate::sampler::{sample_view, Conditioning, DenoiserBackend, SampleError};
use crate::spectral::SpectralError;
use crate::trimap::{
    compute_trimap, render_meta, soft_projection_mask, update_meta, Label, MetaFormatError, MetaTexture, Trimap,
};

pub use config::{default_views, Background, ConfigError, DatasetConfig, RunConfig, ViewSpec};
pub use dataset::{prepare_transfer_dataset, DatasetEntry, CANONICAL_VIEWS};
pub use edit::{edit_with_scribble, edit_with_text, scribble_mask};
pub use matting::{mat_view, unmat, Crop, MattedView};
pub use rundir::{replay_views, RunDir};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("view {view}: {source}")]
    Sampling {
        view: usize,
        #[source]
        source: SampleError,
    },
    #[error("mesh has no texture coordinates")]
    MissingUvs,
    #[error("atlas resolutions differ: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Image(#[from] CanvasError),
    #[error(transparent)]
    Meta(#[from] MetaFormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run directory: {0}")]
    RunDir(String),
}

impl PipelineError {
    /// True when the failure came from the denoiser backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Sampling {
                source: SampleError::Backend { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub keep: usize,
    pub refine: usize,
    pub generate: usize,
}

impl LabelCounts {
    pub fn of(trimap: &Trimap) -> Self {
        Self {
            keep: trimap.count(Label::Keep),
            refine: trimap.count(Label::Refine),
            generate: trimap.count(Label::Generate),
        }
    }

    pub fn paint(&self) -> usize {
        self.refine + self.generate
    }
}

/// What happened in one view; saved as `view.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub view: ViewSpec,
    /// Reason the view was not painted.
    pub skipped: Option<String>,
    pub labels: LabelCounts,
    pub crop: Option<Crop>,
    /// Atlas texels written.
    pub written: usize,
}

#[derive(Debug, Clone)]
pub struct TextureOutput {
    pub atlas: TextureAtlas,
    pub meta: MetaTexture,
    pub views: Vec<ViewRecord>,
}

/// How pixels are labeled in each view.
#[derive(Debug, Clone, Copy)]
pub enum Labeling<'a> {
    /// Compare each pixel's normal z with the meta texture.
    Meta,
    /// Refine where the texel mask is set, keep elsewhere.
    Scribble(&'a [bool]),
}

impl Labeling<'_> {
    fn trimap(&self, render: &RenderOutput, meta: &MetaTexture, cfg: &RunConfig) -> Trimap {
        match self {
            Labeling::Meta => compute_trimap(render, &render_meta(render, meta), &cfg.trimap),
            Labeling::Scribble(mask) => {
                let n = render.resolution;
                let res = meta.resolution;
                Trimap {
                    width: n,
                    height: n,
                    labels: render
                        .fragments
                        .iter()
                        .map(|f| match f {
                            None => Label::Background,
                            Some(f) if f.uv[0].is_finite() => {
                                let t = nearest_texel([f.uv[0] as f64, f.uv[1] as f64], res);
                                if mask[t] {
                                    Label::Refine
                                } else {
                                    Label::Keep
                                }
                            }
                            Some(_) => Label::Keep,
                        })
                        .collect(),
                }
            }
        }
    }
}

/// Background plate at backend resolution.
pub fn background_plate(cfg: &RunConfig, size: usize) -> Result<ColorImage, PipelineError> {
    Ok(match &cfg.background {
        Background::Solid { color } => ColorImage::new(size, size, *color),
        Background::Plate { path } => ColorImage::load_png(path)?.resize(size, size),
    })
}

/// Everything one view needs besides the sampler output.
pub(crate) struct PreparedView {
    pub viewpoint: Viewpoint,
    pub render: RenderOutput,
    pub trimap: Trimap,
}

pub(crate) fn prepare_view(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    meta: &MetaTexture,
    cfg: &RunConfig,
    spec: &ViewSpec,
    labeling: Labeling,
) -> PreparedView {
    let viewpoint = cfg.viewpoint(spec);
    let render = render(mesh, atlas, &viewpoint);
    let trimap = labeling.trimap(&render, meta, cfg);
    PreparedView {
        viewpoint,
        render,
        trimap,
    }
}

/// Un-mats `generated`, projects it and updates the meta texture.
pub(crate) fn apply_generated(
    mesh: &Mesh,
    atlas: &mut TextureAtlas,
    meta: &mut MetaTexture,
    cfg: &RunConfig,
    prepared: &PreparedView,
    matted: &MattedView,
    generated: &ColorImage,
) -> usize {
    let screen = unmat(generated, matted, &prepared.render);
    let soft = soft_projection_mask(&prepared.trimap, cfg.soft_mask_sigma);
    let projected = project_view(
        atlas,
        mesh,
        &prepared.viewpoint,
        &prepared.render,
        &screen,
        &prepared.trimap,
        &soft,
    );
    update_meta(meta, &projected.projection);
    projected.written
}

/// Paints `atlas` view by view. Artifacts are written to `out` when given.
pub fn paint_views<B: DenoiserBackend + ?Sized>(
    mesh: &Mesh,
    atlas: &mut TextureAtlas,
    meta: &mut MetaTexture,
    cfg: &RunConfig,
    labeling: Labeling,
    backend: &mut B,
    out: Option<&RunDir>,
) -> Result<Vec<ViewRecord>, PipelineError> {
    cfg.validate()?;
    if !mesh.has_uvs() {
        return Err(PipelineError::MissingUvs);
    }
    if atlas.resolution() != meta.resolution {
        return Err(PipelineError::ResolutionMismatch(atlas.resolution(), meta.resolution));
    }
    let size = backend.image_size();
    let shape = backend.latent_shape();
    if size != cfg.backend_resolution || shape.width == 0 || size % shape.width != 0 || shape.width != shape.height {
        return Err(ConfigError::Invalid(format!(
            "backend works at {size} px with a {}x{} latent; config asks for {} px",
            shape.width, shape.height, cfg.backend_resolution
        ))
        .into());
    }
    let factor = size / shape.width;
    let plate = background_plate(cfg, size)?;
    let steps = cfg.schedule.step_count();

    let mut session_open = false;
    let mut records = Vec::with_capacity(cfg.views.len());
    for (index, spec) in cfg.views.iter().enumerate() {
        let prepared = prepare_view(mesh, atlas, meta, cfg, spec, labeling);
        let labels = LabelCounts::of(&prepared.trimap);
        let mut record = ViewRecord {
            index,
            view: *spec,
            skipped: None,
            labels,
            crop: None,
            written: 0,
        };
        let crop = Crop::around_foreground(&prepared.render, cfg.crop_margin, size);
        let skip = if crop.is_none() {
            Some("empty foreground")
        } else if labels.paint() == 0 {
            Some("nothing to paint")
        } else if steps == 0 {
            Some("no sampling steps")
        } else {
            None
        };
        if let Some(reason) = skip {
            if crop.is_none() {
                warn!("view {index}: empty foreground, skipping");
            } else {
                info!("view {index}: {reason}, skipping");
            }
            record.skipped = Some(reason.to_string());
            if let Some(dir) = out {
                dir.write_view(&record, &prepared.trimap, None, None, &[])?;
                dir.write_checkpoint(index, atlas, meta)?;
            }
            records.push(record);
            continue;
        }
        let crop = crop.expect("checked above");
        record.crop = Some(crop);
        // A sliver of foreground can vanish in the nearest-sampled crop.
        let Ok(matted) = mat_view(&prepared.render, &prepared.trimap, crop, &plate, cfg.depth_invert) else {
            warn!("view {index}: foreground lost in the crop, skipping");
            record.skipped = Some("empty foreground".into());
            if let Some(dir) = out {
                dir.write_view(&record, &prepared.trimap, None, None, &[])?;
                dir.write_checkpoint(index, atlas, meta)?;
            }
            records.push(record);
            continue;
        };
        let latent_trimap = matted.trimap.downsample(factor);
        let mut cond = Conditioning::new(cfg.prompt.clone(), cfg.seed);
        cond.guidance_scale = cfg.guidance_scale;
        cond.depth = Some(matted.depth.clone());
        cond.reference = Some(matted.image.clone());
        let sample_err = |source| PipelineError::Sampling { view: index, source };
        if !session_open {
            backend
                .begin_session(&cond)
                .map_err(|source| sample_err(SampleError::Backend { step: None, source }))?;
            session_open = true;
        }
        let sampled = sample_view(
            &matted.image,
            &latent_trimap,
            &cond,
            &cfg.schedule,
            &cfg.blend,
            backend,
        )
        .map_err(sample_err)?;
        // Quantized so that a replay from the saved PNG is exact.
        let generated = sampled.image.clamp01().quantized();
        record.written = apply_generated(mesh, atlas, meta, cfg, &prepared, &matted, &generated);
        info!(
            "view {index}: keep {} refine {} generate {}, {} texels written",
            labels.keep, labels.refine, labels.generate, record.written
        );
        if let Some(dir) = out {
            dir.write_view(
                &record,
                &prepared.trimap,
                Some(&matted),
                Some(&generated),
                &sampled.trace,
            )?;
            dir.write_checkpoint(index, atlas, meta)?;
        }
        records.push(record);
    }
    Ok(records)
}

/// Paints a mesh from a blank atlas.
///
/// With `out`, the run directory receives `config.toml`, per-view dumps,
/// atlas checkpoints, `meta.bin` and the final `atlas.png` (after the gutter
/// bleed).
pub fn texture_mesh<B: DenoiserBackend + ?Sized>(
    mesh: &Mesh,
    cfg: &RunConfig,
    backend: &mut B,
    out: Option<&Path>,
) -> Result<TextureOutput, PipelineError> {
    cfg.validate()?;
    let mut atlas = TextureAtlas::new(cfg.atlas_resolution, cfg.atlas_fill);
    let mut meta = MetaTexture::new(cfg.atlas_resolution);
    let dir = out.map(|p| RunDir::create(p, cfg)).transpose()?;
    let views = paint_views(mesh, &mut atlas, &mut meta, cfg, Labeling::Meta, backend, dir.as_ref())?;
    bleed_gutter(&mut atlas, &meta.painted, cfg.gutter_bleed);
    if let Some(dir) = &dir {
        dir.write_final(&atlas, &meta)?;
    }
    Ok(TextureOutput { atlas, meta, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{naive_uv_chart, shapes};
    use crate::sampler::MockDenoiser;

    fn small_config() -> RunConfig {
        RunConfig {
            prompt: "a stone".into(),
            seed: 7,
            views: vec![ViewSpec::new(0.0, 20.0), ViewSpec::new(120.0, 20.0)],
            atlas_resolution: 128,
            render_resolution: 128,
            backend_resolution: 64,
            soft_mask_sigma: 1.5,
            ..RunConfig::default()
        }
    }

    fn mock() -> MockDenoiser {
        MockDenoiser {
            image_size: 64,
            ..MockDenoiser::default()
        }
    }

    #[test]
    fn first_view_generates_everything() {
        let mesh = naive_uv_chart(&shapes::cube(0.35), 128).unwrap();
        let out = texture_mesh(&mesh, &small_config(), &mut mock(), None).unwrap();
        let first = &out.views[0].labels;
        assert_eq!(first.keep + first.refine, 0);
        assert!(first.generate > 0);
        assert!(out.views[1].labels.keep > 0);
        // the naive chart fills about 15% of the atlas
        assert!(out.meta.painted_fraction() > 0.1);
    }

    #[test]
    fn uv_less_mesh_is_rejected() {
        let err = texture_mesh(&shapes::cube(0.35), &small_config(), &mut mock(), None).unwrap_err();
        assert!(matches!(err, PipelineError::MissingUvs));
    }

    #[test]
    fn backend_resolution_must_match() {
        let mesh = naive_uv_chart(&shapes::cube(0.35), 128).unwrap();
        let err = texture_mesh(&mesh, &small_config(), &mut MockDenoiser::default(), None).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
    }
}
