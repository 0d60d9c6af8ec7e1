use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig, ViewSpec};
use crate::atlas::TextureAtlas;
use crate::canvas::ColorImage;
use crate::mesh::Mesh;
use crate::render::{depth_to_conditioning, render};
use crate::spectral::{build_laplacian, compute_spectrum, random_spectral_augment, SpectralConfig};

/// Direction token name and camera direction of the six dataset views.
pub const CANONICAL_VIEWS: [(&str, ViewSpec); 6] = [
    ("left", ViewSpec::new(270.0, 0.0)),
    ("right", ViewSpec::new(90.0, 0.0)),
    ("overhead", ViewSpec::new(0.0, 90.0)),
    ("bottom", ViewSpec::new(0.0, -90.0)),
    ("front", ViewSpec::new(0.0, 0.0)),
    ("back", ViewSpec::new(180.0, 0.0)),
];

/// One line of `prompts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub round: usize,
    pub view: String,
    pub image: String,
    pub depth: String,
    pub prompt: String,
    pub eigen_index: usize,
    pub magnitude: f64,
    pub background: [f32; 3],
}

pub fn direction_prompt(view: &str, texture_token: &str) -> String {
    format!("a <D_{view}> photo of a {texture_token}")
}

/// Renders spectrally deformed copies of a textured mesh from six canonical
/// views over random solid backgrounds. Writes images, depth maps and
/// `prompts.jsonl` into `out`. Rounds run in parallel; output is
/// deterministic for a given seed.
pub fn prepare_transfer_dataset(
    mesh: &Mesh,
    atlas: &TextureAtlas,
    cfg: &RunConfig,
    out: &Path,
) -> Result<Vec<DatasetEntry>, PipelineError> {
    cfg.validate()?;
    let ds = &cfg.dataset;
    if !mesh.has_uvs() {
        return Err(PipelineError::MissingUvs);
    }
    fs::create_dir_all(out)?;
    let floor = SpectralConfig::default().weight_floor;
    let laplacian = build_laplacian(mesh, floor)?;
    let k = ds.eigenpairs.min(mesh.vertices().len());
    let spectrum = compute_spectrum(&laplacian, k)?;

    let rounds: Vec<Vec<DatasetEntry>> = (0..ds.rounds)
        .into_par_iter()
        .map(|round| -> Result<Vec<DatasetEntry>, PipelineError> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(round as u64 + 1);
            let (deformed, deformation) = random_spectral_augment(mesh, &spectrum, ds.amplitude, rng.random())?;
            let mut entries = Vec::with_capacity(CANONICAL_VIEWS.len());
            for (name, spec) in CANONICAL_VIEWS {
                let mut view = cfg.viewpoint(&spec);
                view.resolution = ds.resolution;
                let r = render(&deformed, atlas, &view);
                let background: [f32; 3] = [rng.random(), rng.random(), rng.random()];
                let n = ds.resolution;
                let image = ColorImage::from_fn(n, n, |x, y| {
                    if r.is_foreground(y * n + x) {
                        r.color.get(x, y)
                    } else {
                        background
                    }
                });
                let depth = depth_to_conditioning(&r.depth_map(), n, cfg.depth_invert)
                    .map_err(|e| PipelineError::RunDir(format!("round {round} {name}: {e}")))?;
                let stem = format!("round_{round:04}_{name}");
                let entry = DatasetEntry {
                    round,
                    view: name.to_string(),
                    image: format!("{stem}.png"),
                    depth: format!("{stem}_depth.png"),
                    prompt: direction_prompt(name, &ds.texture_token),
                    eigen_index: deformation.eigen_index,
                    magnitude: deformation.magnitude,
                    background,
                };
                image.save_png(out.join(&entry.image))?;
                depth.save_png(out.join(&entry.depth))?;
                entries.push(entry);
            }
            Ok(entries)
        })
        .collect::<Result<_, _>>()?;

    let entries: Vec<DatasetEntry> = rounds.into_iter().flatten().collect();
    let mut file = fs::File::create(out.join("prompts.jsonl"))?;
    for e in &entries {
        serde_json::to_writer(&mut file, e).map_err(std::io::Error::from)?;
        file.write_all(b"\n")?;
    }
    Ok(entries)
}
