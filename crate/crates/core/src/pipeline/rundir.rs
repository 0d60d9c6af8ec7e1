use std::fs;
use std::path::{Path, PathBuf};

use super::{
    apply_generated, background_plate, mat_view, MattedView, PipelineError, RunConfig, ViewRecord,
};
use crate::atlas::TextureAtlas;
use crate::canvas::ColorImage;
use crate::mesh::Mesh;
use crate::render::render;
use crate::sampler::{write_trace_jsonl, StepTrace};
use crate::trimap::{MetaTexture, Trimap};

/// Output directory of a painting run.
///
/// ```text
/// config.toml
/// view_0000/  view.json trimap.png depth.png input.png generated.png trace.jsonl
/// atlas_0000.png ...   checkpoint after each view
/// meta.bin
/// atlas.png            final atlas after the gutter bleed
/// ```
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>, cfg: &RunConfig) -> Result<Self, PipelineError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        fs::write(root.join("config.toml"), cfg.to_toml())?;
        Ok(Self { root })
    }

    pub fn open(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn view_dir(&self, index: usize) -> PathBuf {
        self.root.join(format!("view_{index:04}"))
    }

    pub fn checkpoint_path(&self, index: usize) -> PathBuf {
        self.root.join(format!("atlas_{index:04}.png"))
    }

    pub fn write_view(
        &self,
        record: &ViewRecord,
        trimap: &Trimap,
        matted: Option<&MattedView>,
        generated: Option<&ColorImage>,
        trace: &[StepTrace],
    ) -> Result<(), PipelineError> {
        let dir = self.view_dir(record.index);
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("view.json"),
            serde_json::to_string_pretty(record).expect("record serializes"),
        )?;
        trimap.visualize().save_png(dir.join("trimap.png"))?;
        if let Some(m) = matted {
            m.depth.save_png(dir.join("depth.png"))?;
            m.image.save_png(dir.join("input.png"))?;
        }
        if let Some(g) = generated {
            g.save_png(dir.join("generated.png"))?;
        }
        if !trace.is_empty() {
            let mut buf = Vec::new();
            write_trace_jsonl(trace, &mut buf)?;
            fs::write(dir.join("trace.jsonl"), buf)?;
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, index: usize, atlas: &TextureAtlas, meta: &MetaTexture) -> Result<(), PipelineError> {
        atlas.save_png(self.checkpoint_path(index))?;
        fs::write(self.root.join("meta.bin"), meta.to_bytes())?;
        Ok(())
    }

    pub fn write_final(&self, atlas: &TextureAtlas, meta: &MetaTexture) -> Result<(), PipelineError> {
        atlas.save_png(self.root.join("atlas.png"))?;
        fs::write(self.root.join("meta.bin"), meta.to_bytes())?;
        Ok(())
    }

    pub fn load_config(&self) -> Result<RunConfig, PipelineError> {
        Ok(RunConfig::load(self.root.join("config.toml"))?)
    }

    pub fn load_meta(&self) -> Result<MetaTexture, PipelineError> {
        Ok(MetaTexture::from_bytes(&fs::read(self.root.join("meta.bin"))?)?)
    }

    pub fn load_record(&self, index: usize) -> Result<ViewRecord, PipelineError> {
        let text = fs::read_to_string(self.view_dir(index).join("view.json"))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::RunDir(format!("view {index}: {e}")))
    }
}

/// Rebuilds the atlas after views `0..=last` of a texturing run from its saved
/// trimaps and generated images, without a backend.
pub fn replay_views(mesh: &Mesh, run: &RunDir, last: usize) -> Result<(TextureAtlas, MetaTexture), PipelineError> {
    let cfg = run.load_config()?;
    let mut atlas = TextureAtlas::new(cfg.atlas_resolution, cfg.atlas_fill);
    let mut meta = MetaTexture::new(cfg.atlas_resolution);
    let plate = background_plate(&cfg, cfg.backend_resolution)?;
    for index in 0..=last.min(cfg.views.len().saturating_sub(1)) {
        let record = run.load_record(index)?;
        let (Some(crop), None) = (record.crop, &record.skipped) else {
            continue;
        };
        let dir = run.view_dir(index);
        let trimap = Trimap::from_visualization(&ColorImage::load_png(dir.join("trimap.png"))?)
            .ok_or_else(|| PipelineError::RunDir(format!("view {index}: trimap.png has unknown colors")))?;
        let generated = ColorImage::load_png(dir.join("generated.png"))?;
        let viewpoint = cfg.viewpoint(&record.view);
        let prepared = super::PreparedView {
            render: render(mesh, &atlas, &viewpoint),
            viewpoint,
            trimap,
        };
        let matted = mat_view(&prepared.render, &prepared.trimap, crop, &plate, cfg.depth_invert)
            .map_err(|e| PipelineError::RunDir(format!("view {index}: {e}")))?;
        apply_generated(mesh, &mut atlas, &mut meta, &cfg, &prepared, &matted, &generated);
    }
    Ok((atlas, meta))
}
