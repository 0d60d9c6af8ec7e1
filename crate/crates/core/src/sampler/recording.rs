use super::{BackendError, Conditioning, DenoiseMode, DenoiserBackend, Latent, LatentShape};
use crate::canvas::ColorImage;

/// A backend call seen by [`RecordingBackend`].
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiseCall {
    Encode,
    Decode,
    AddNoise { step: usize },
    Denoise { step: usize, mode: DenoiseMode, input: Latent },
}

/// Wraps a backend and logs every call in order.
#[derive(Debug, Clone)]
pub struct RecordingBackend<B> {
    pub inner: B,
    pub calls: Vec<DenoiseCall>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Vec::new(),
        }
    }

    /// `(step, mode)` of every denoise call.
    pub fn mode_trace(&self) -> Vec<(usize, DenoiseMode)> {
        self.calls
            .iter()
            .filter_map(|c| match c {
                DenoiseCall::Denoise { step, mode, .. } => Some((*step, *mode)),
                _ => None,
            })
            .collect()
    }

    /// Latents handed to the model, indexed by step.
    pub fn denoise_inputs(&self) -> Vec<&Latent> {
        self.calls
            .iter()
            .filter_map(|c| match c {
                DenoiseCall::Denoise { input, .. } => Some(input),
                _ => None,
            })
            .collect()
    }
}

impl<B: DenoiserBackend> DenoiserBackend for RecordingBackend<B> {
    fn step_count(&self) -> usize {
        self.inner.step_count()
    }

    fn latent_shape(&self) -> LatentShape {
        self.inner.latent_shape()
    }

    fn image_size(&self) -> usize {
        self.inner.image_size()
    }

    fn begin_session(&mut self, cond: &Conditioning) -> Result<(), BackendError> {
        self.inner.begin_session(cond)
    }

    fn encode(&mut self, image: &ColorImage) -> Result<Latent, BackendError> {
        self.calls.push(DenoiseCall::Encode);
        self.inner.encode(image)
    }

    fn decode(&mut self, latent: &Latent) -> Result<ColorImage, BackendError> {
        self.calls.push(DenoiseCall::Decode);
        self.inner.decode(latent)
    }

    fn add_noise(&mut self, latent: &Latent, step: usize, seed: u64) -> Result<Latent, BackendError> {
        self.calls.push(DenoiseCall::AddNoise { step });
        self.inner.add_noise(latent, step, seed)
    }

    fn denoise_step(
        &mut self,
        latent: &Latent,
        step: usize,
        mode: DenoiseMode,
        cond: &Conditioning,
    ) -> Result<Latent, BackendError> {
        self.calls.push(DenoiseCall::Denoise {
            step,
            mode,
            input: latent.clone(),
        });
        self.inner.denoise_step(latent, step, mode, cond)
    }
}
