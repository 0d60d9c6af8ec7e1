//! Masked, interleaved denoising of a single view.
//!
//! The sampler owns the schedule logic only. Actual denoising is delegated to
//! a [`DenoiserBackend`]: the deterministic [`MockDenoiser`] for tests, or
//! [`HttpDenoiser`] talking to a model server.

mod http;
mod mock;
mod recording;

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{ColorImage, Plane};
use crate::trimap::{generate_mask, realize_blend_mask, BlendConfig, LatentMask, Trimap};

pub use http::{HttpDenoiser, WireTensor};
pub use mock::{MockDenoiser, MockTarget};
pub use recording::{DenoiseCall, RecordingBackend};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_GUIDANCE: f32 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMode {
    Depth,
    Inpaint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel-major latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub shape: LatentShape,
    pub data: Vec<f32>,
}

impl Latent {
    pub fn zeros(shape: LatentShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Copies every channel of the cells where `frozen` holds from `src`.
    pub fn overwrite_cells(&mut self, src: &Latent, mask: &LatentMask) {
        let plane = self.shape.width * self.shape.height;
        assert_eq!(mask.free.len(), plane, "mask must match latent resolution");
        for c in 0..self.shape.channels {
            for (cell, &free) in mask.free.iter().enumerate() {
                if !free {
                    self.data[c * plane + cell] = src.data[c * plane + cell];
                }
            }
        }
    }
}

/// Per-view conditioning handed to every denoise step.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub prompt: String,
    /// Normalized depth at the backend's image resolution.
    pub depth: Option<Plane>,
    /// Generate cells at latent resolution; filled in by the sampler.
    pub inpaint_mask: Option<LatentMask>,
    pub guidance_scale: f32,
    pub seed: u64,
    /// The matted current render. Real backends ignore it; the mock's
    /// reference mode steers toward it.
    pub reference: Option<ColorImage>,
}

impl Conditioning {
    pub fn new(prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            prompt: prompt.into(),
            depth: None,
            inpaint_mask: None,
            guidance_scale: DEFAULT_GUIDANCE,
            seed,
            reference: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("missing {0} conditioning")]
    MissingConditioning(&'static str),
}

/// Stepwise denoiser with depth and inpaint conditioning sharing one latent space.
pub trait DenoiserBackend {
    fn step_count(&self) -> usize;
    fn latent_shape(&self) -> LatentShape;
    /// Side length of the square images `encode` accepts.
    fn image_size(&self) -> usize;

    /// Prepares per-run state (prompt, guidance, seed). Called once per run.
    fn begin_session(&mut self, _cond: &Conditioning) -> Result<(), BackendError> {
        Ok(())
    }

    fn encode(&mut self, image: &ColorImage) -> Result<Latent, BackendError>;
    fn decode(&mut self, latent: &Latent) -> Result<ColorImage, BackendError>;
    /// Noises a clean latent to the level of sampling step `step` (step 0 is pure noise).
    fn add_noise(&mut self, latent: &Latent, step: usize, seed: u64) -> Result<Latent, BackendError>;
    /// One denoising step from `step` to `step + 1`.
    fn denoise_step(
        &mut self,
        latent: &Latent,
        step: usize,
        mode: DenoiseMode,
        cond: &Conditioning,
    ) -> Result<Latent, BackendError>;
}

impl<B: DenoiserBackend + ?Sized> DenoiserBackend for &mut B {
    fn step_count(&self) -> usize {
        (**self).step_count()
    }
    fn latent_shape(&self) -> LatentShape {
        (**self).latent_shape()
    }
    fn image_size(&self) -> usize {
        (**self).image_size()
    }
    fn begin_session(&mut self, cond: &Conditioning) -> Result<(), BackendError> {
        (**self).begin_session(cond)
    }
    fn encode(&mut self, image: &ColorImage) -> Result<Latent, BackendError> {
        (**self).encode(image)
    }
    fn decode(&mut self, latent: &Latent) -> Result<ColorImage, BackendError> {
        (**self).decode(latent)
    }
    fn add_noise(&mut self, latent: &Latent, step: usize, seed: u64) -> Result<Latent, BackendError> {
        (**self).add_noise(latent, step, seed)
    }
    fn denoise_step(
        &mut self,
        latent: &Latent,
        step: usize,
        mode: DenoiseMode,
        cond: &Conditioning,
    ) -> Result<Latent, BackendError> {
        (**self).denoise_step(latent, step, mode, cond)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpan {
    pub start: usize,
    pub end: usize,
    pub mode: DenoiseMode,
}

/// Which model runs at each sampling step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub spans: Vec<ScheduleSpan>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule spans must cover 0..{steps} contiguously; problem at step {at}")]
    NotPartition { steps: usize, at: usize },
}

impl Default for SamplingSchedule {
    /// Depth for steps 0..10, inpaint for 10..20, depth for 20..50.
    fn default() -> Self {
        Self::from_ranges(&[
            (0..10, DenoiseMode::Depth),
            (10..20, DenoiseMode::Inpaint),
            (20..DEFAULT_STEPS, DenoiseMode::Depth),
        ])
    }
}

impl SamplingSchedule {
    pub fn from_ranges(ranges: &[(Range<usize>, DenoiseMode)]) -> Self {
        Self {
            spans: ranges
                .iter()
                .map(|(r, m)| ScheduleSpan {
                    start: r.start,
                    end: r.end,
                    mode: *m,
                })
                .collect(),
        }
    }

    /// A single mode for every step.
    pub fn uniform(steps: usize, mode: DenoiseMode) -> Self {
        if steps == 0 {
            return Self { spans: vec![] };
        }
        Self::from_ranges(&[(0..steps, mode)])
    }

    pub fn step_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let mut next = 0;
        for s in &self.spans {
            if s.start != next || s.end <= s.start {
                return Err(ScheduleError::NotPartition {
                    steps: self.step_count(),
                    at: s.start,
                });
            }
            next = s.end;
        }
        Ok(())
    }

    pub fn mode_at(&self, step: usize) -> Option<DenoiseMode> {
        self.spans
            .iter()
            .find(|s| (s.start..s.end).contains(&step))
            .map(|s| s.mode)
    }

    pub fn uses(&self, mode: DenoiseMode) -> bool {
        self.spans.iter().any(|s| s.mode == mode)
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("backend failed at step {step:?}: {source}")]
    Backend {
        step: Option<usize>,
        #[source]
        source: BackendError,
    },
    #[error("schedule has {schedule} steps but the backend runs {backend}")]
    ScheduleMismatch { schedule: usize, backend: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("trimap is {got:?} but the latent grid is {expected:?}")]
    TrimapShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// One line of the sampling trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub mode: DenoiseMode,
    /// Cells denoised freely (blend mask = 1) at this step.
    pub mask_popcount: usize,
}

pub fn write_trace_jsonl(trace: &[StepTrace], mut out: impl Write) -> std::io::Result<()> {
    for t in trace {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: ColorImage,
    pub trace: Vec<StepTrace>,
}

/// Runs the masked denoising loop for one view.
///
/// `current` is the matted render at backend resolution and `latent_trimap`
/// its labels at latent resolution. The loop starts from the noise of step 0
/// (identical for every view sharing `cond.seed`); before each step the
/// frozen cells are overwritten with the current render noised to that step,
/// then the scheduled model runs. After the last step the frozen cells receive
/// the clean encoded render, so keep regions decode exactly as
/// `decode(encode(current))`.
pub fn sample_view<B: DenoiserBackend + ?Sized>(
    current: &ColorImage,
    latent_trimap: &Trimap,
    cond: &Conditioning,
    schedule: &SamplingSchedule,
    blend: &BlendConfig,
    backend: &mut B,
) -> Result<SampleOutput, SampleError> {
    schedule.validate()?;
    let steps = backend.step_count();
    if schedule.step_count() != steps {
        return Err(SampleError::ScheduleMismatch {
            schedule: schedule.step_count(),
            backend: steps,
        });
    }
    let shape = backend.latent_shape();
    if (latent_trimap.width, latent_trimap.height) != (shape.width, shape.height) {
        return Err(SampleError::TrimapShape {
            got: (latent_trimap.width, latent_trimap.height),
            expected: (shape.width, shape.height),
        });
    }
    let at = |step: Option<usize>| move |source| SampleError::Backend { step, source };

    let mut cond = cond.clone();
    cond.inpaint_mask = Some(generate_mask(latent_trimap));

    let clean = backend.encode(current).map_err(at(None))?;
    let mut z = backend
        .add_noise(&Latent::zeros(shape), 0, cond.seed)
        .map_err(at(Some(0)))?;
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let mask = realize_blend_mask(latent_trimap, step, blend);
        if mask.popcount() < mask.free.len() {
            let noised = backend
                .add_noise(&clean, step, cond.seed)
                .map_err(at(Some(step)))?;
            z.overwrite_cells(&noised, &mask);
        }
        let mode = schedule.mode_at(step).expect("validated schedule covers every step");
        trace.push(StepTrace {
            step,
            mode,
            mask_popcount: mask.popcount(),
        });
        z = backend
            .denoise_step(&z, step, mode, &cond)
            .map_err(at(Some(step)))?;
    }
    z.overwrite_cells(&clean, &realize_blend_mask(latent_trimap, steps, blend));
    let image = backend.decode(&z).map_err(at(None))?;
    Ok(SampleOutput { image, trace })
}
