use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use texforge::mesh::{load_mesh, naive_uv_chart, LoadOptions, Mesh};
use texforge::pipeline::{
    edit_with_scribble, edit_with_text, prepare_transfer_dataset, texture_mesh, PipelineError, RunConfig,
};
use texforge::sampler::{DenoiserBackend, HttpDenoiser, MockDenoiser};
use texforge::TextureAtlas;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "texforge", version, about = "Paint textures onto meshes with a depth-conditioned denoiser")]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Texture a mesh from scratch.
    Texture(TextureArgs),
    /// Edit an existing texture with a new prompt or a hand-painted scribble.
    Edit(EditArgs),
    /// Render spectrally augmented views for texture transfer.
    Augment(AugmentArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// `mock` or the base URL of a model server.
    #[arg(long, env = "TEXFORGE_BACKEND")]
    backend: Option<String>,
    /// Seconds to wait for the model server to accept a connection.
    #[arg(long, default_value_t = 5.0)]
    connect_timeout: f64,
}

#[derive(Args, Debug)]
struct TextureArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EditMode {
    Text,
    Scribble,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long, value_enum)]
    mode: EditMode,
    #[arg(long)]
    mesh: PathBuf,
    /// Current texture.
    #[arg(long)]
    atlas: PathBuf,
    /// Hand-edited copy of `--atlas` (scribble mode).
    #[arg(long)]
    edited_atlas: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Backend(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            _ if e.is_backend() => CliError::Backend(e.to_string()),
            PipelineError::Config(_)
            | PipelineError::MissingUvs
            | PipelineError::ResolutionMismatch(..)
            | PipelineError::Mesh(_) => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

/// Machine-readable record of a run, written as `run.json`.
#[derive(Serialize)]
struct RunRecord {
    command: &'static str,
    config_sha256: String,
    versions: BTreeMap<&'static str, &'static str>,
    seed: u64,
    backend: Option<String>,
    inputs: BTreeMap<&'static str, String>,
    timings: BTreeMap<&'static str, f64>,
}

impl RunRecord {
    fn new(command: &'static str, cfg: &RunConfig) -> Self {
        let digest = Sha256::digest(cfg.to_toml().as_bytes());
        let mut versions = BTreeMap::new();
        versions.insert("texforge", env!("CARGO_PKG_VERSION"));
        Self {
            command,
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            versions,
            seed: cfg.seed,
            backend: None,
            inputs: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(dir.join("run.json"), text).map_err(|e| CliError::Other(format!("writing run.json: {e}")))
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_input_mesh(path: &Path, atlas_resolution: usize) -> Result<Mesh, CliError> {
    let loaded = load_mesh(path, &LoadOptions::default())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if loaded.missing_uv {
        warn!("{} has no texture coordinates; using a per-triangle chart", path.display());
        return naive_uv_chart(&loaded.mesh, atlas_resolution).map_err(|e| CliError::Config(e.to_string()));
    }
    Ok(loaded.mesh)
}

fn load_atlas(path: &Path) -> Result<TextureAtlas, CliError> {
    TextureAtlas::load_png(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .ok_or_else(|| CliError::Config(format!("{}: atlas must be square", path.display())))
}

fn connect_backend(args: &BackendArgs, cfg: &RunConfig) -> Result<(Box<dyn DenoiserBackend>, String), CliError> {
    let spec = args
        .backend
        .clone()
        .ok_or_else(|| CliError::Config("--backend (or TEXFORGE_BACKEND) is required".into()))?;
    if spec == "mock" {
        let mock = MockDenoiser {
            steps: cfg.schedule.step_count(),
            image_size: cfg.backend_resolution,
            ..MockDenoiser::default()
        };
        if cfg.backend_resolution % mock.factor != 0 {
            return Err(CliError::Config(format!(
                "the mock backend needs a backend resolution divisible by {}",
                mock.factor
            )));
        }
        return Ok((Box::new(mock), spec));
    }
    if !(args.connect_timeout > 0.0) {
        return Err(CliError::Config("--connect-timeout must be positive".into()));
    }
    let http = HttpDenoiser::connect(&spec, Duration::from_secs_f64(args.connect_timeout))
        .map_err(|e| CliError::Backend(format!("{spec}: {e}")))?;
    info!("connected to {spec}: {:?}", http.meta());
    Ok((Box::new(http), spec))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))
}

fn dump(cfg: &RunConfig) -> Result<(), CliError> {
    print!("{}", cfg.to_toml());
    Ok(())
}

fn cmd_texture(args: TextureArgs, dump_only: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = args.prompt {
        cfg.prompt = p;
    }
    if dump_only {
        return dump(&cfg);
    }
    if cfg.prompt.trim().is_empty() {
        return Err(CliError::Config(
            "a prompt is required (--prompt or `prompt` in the config)\n\nUsage: texforge texture --mesh <MESH> --prompt <PROMPT> --backend <BACKEND> --out <OUT>".into(),
        ));
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mesh = load_input_mesh(&args.mesh, cfg.atlas_resolution)?;
    let (mut backend, spec) = connect_backend(&args.backend, &cfg)?;
    create_out(&args.common.out)?;
    let mut record = RunRecord::new("texture", &cfg);
    record.backend = Some(spec);
    record.inputs.insert("mesh", args.mesh.display().to_string());
    let t = Instant::now();
    let out = texture_mesh(&mesh, &cfg, backend.as_mut(), Some(&args.common.out))?;
    record.timings.insert("pipeline_seconds", t.elapsed().as_secs_f64());
    record.timings.insert("total_seconds", started.elapsed().as_secs_f64());
    record.write(&args.common.out)?;
    info!(
        "painted {:.1}% of the atlas in {} views",
        100.0 * out.meta.painted_fraction(),
        out.views.len()
    );
    Ok(())
}

fn cmd_edit(args: EditArgs, dump_only: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = &args.prompt {
        cfg.prompt = p.clone();
    }
    if dump_only {
        return dump(&cfg);
    }
    if matches!(args.mode, EditMode::Text) && cfg.prompt.trim().is_empty() {
        return Err(CliError::Config("text editing needs a prompt (--prompt)".into()));
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let atlas = load_atlas(&args.atlas)?;
    cfg.atlas_resolution = atlas.resolution();
    let edited = match args.mode {
        EditMode::Scribble => {
            let path = args
                .edited_atlas
                .as_ref()
                .ok_or_else(|| CliError::Config("scribble editing needs --edited-atlas".into()))?;
            Some(load_atlas(path)?)
        }
        EditMode::Text => None,
    };
    let mesh = load_input_mesh(&args.mesh, cfg.atlas_resolution)?;
    let (mut backend, spec) = connect_backend(&args.backend, &cfg)?;
    create_out(&args.common.out)?;
    let mut record = RunRecord::new("edit", &cfg);
    record.backend = Some(spec);
    record.inputs.insert("mesh", args.mesh.display().to_string());
    record.inputs.insert("atlas", args.atlas.display().to_string());
    record.inputs.insert("mode", format!("{:?}", args.mode).to_lowercase());
    let t = Instant::now();
    match edited {
        Some(edited) => {
            record.inputs.insert(
                "edited_atlas",
                args.edited_atlas.as_ref().unwrap().display().to_string(),
            );
            edit_with_scribble(&mesh, &atlas, &edited, &cfg, backend.as_mut(), Some(&args.common.out))?;
        }
        None => {
            edit_with_text(&mesh, &atlas, &cfg, backend.as_mut(), Some(&args.common.out))?;
        }
    }
    record.timings.insert("pipeline_seconds", t.elapsed().as_secs_f64());
    record.timings.insert("total_seconds", started.elapsed().as_secs_f64());
    record.write(&args.common.out)
}

fn cmd_augment(args: AugmentArgs, dump_only: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(r) = args.rounds {
        cfg.dataset.rounds = r;
    }
    if dump_only {
        return dump(&cfg);
    }
    if cfg.dataset.rounds == 0 {
        return Err(CliError::Config("--rounds must be at least 1".into()));
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let atlas = load_atlas(&args.atlas)?;
    let mesh = load_input_mesh(&args.mesh, atlas.resolution())?;
    create_out(&args.common.out)?;
    std::fs::write(args.common.out.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut record = RunRecord::new("augment", &cfg);
    record.inputs.insert("mesh", args.mesh.display().to_string());
    record.inputs.insert("atlas", args.atlas.display().to_string());
    let entries = prepare_transfer_dataset(&mesh, &atlas, &cfg, &args.common.out.join("dataset"))?;
    info!("wrote {} dataset images", entries.len());
    record.timings.insert("total_seconds", started.elapsed().as_secs_f64());
    record.write(&args.common.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        None if cli.dump_config => dump(&RunConfig::default()),
        None => Err(CliError::Config("a subcommand is required; see --help".into())),
        Some(Command::Texture(a)) => cmd_texture(a, cli.dump_config),
        Some(Command::Edit(a)) => cmd_edit(a, cli.dump_config),
        Some(Command::Augment(a)) => cmd_augment(a, cli.dump_config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("texforge: {e}");
            ExitCode::from(e.code())
        }
    }
}
