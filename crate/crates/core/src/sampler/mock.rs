use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, Conditioning, DenoiseMode, DenoiserBackend, Latent, LatentShape};
use crate::canvas::ColorImage;

/// What depth-mode steps pull the latent toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockTarget {
    /// A flat color derived from the prompt and seed, shaded by depth.
    Procedural,
    /// The conditioning's reference image (steps toward the current render).
    Reference,
}

/// Deterministic stand-in for a latent diffusion model.
///
/// Latents are box-downsampled RGB images. Depth steps move every cell a
/// fixed fraction toward the target; inpaint steps move masked cells toward
/// the mean of their 4-neighbors. Encoding sums blocks pairwise, so
/// `encode(decode(z)) == z` bit for bit.
#[derive(Debug, Clone)]
pub struct MockDenoiser {
    pub steps: usize,
    pub image_size: usize,
    /// Pixels per latent cell along each axis; a power of two.
    pub factor: usize,
    /// Fraction of the distance to the target covered per depth step.
    pub depth_rate: f32,
    /// Fraction of the distance to the neighbor mean covered per inpaint step.
    pub inpaint_rate: f32,
    pub target: MockTarget,
}

impl Default for MockDenoiser {
    fn default() -> Self {
        Self {
            steps: super::DEFAULT_STEPS,
            image_size: 512,
            factor: 8,
            depth_rate: 0.25,
            inpaint_rate: 0.5,
            target: MockTarget::Procedural,
        }
    }
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Sums a slice pairwise; exact for a slice of identical values whose length is a power of two.
fn pairwise_sum(v: &[f32]) -> f32 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

impl MockDenoiser {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    /// Base color for a prompt/seed pair.
    pub fn prompt_color(prompt: &str, seed: u64) -> [f32; 3] {
        let h = fnv1a(prompt.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let h = fnv1a(&h.to_le_bytes());
        [0, 1, 2].map(|k| 0.15 + 0.7 * ((h >> (16 * k)) & 0xffff) as f32 / 65535.0)
    }

    fn cells(&self) -> usize {
        self.image_size / self.factor
    }

    /// Target latent for depth steps.
    pub fn target_latent(&self, cond: &Conditioning) -> Result<Latent, BackendError> {
        match self.target {
            MockTarget::Reference => {
                let reference = cond
                    .reference
                    .as_ref()
                    .ok_or(BackendError::MissingConditioning("reference"))?;
                self.box_encode(reference)
            }
            MockTarget::Procedural => {
                let depth = cond
                    .depth
                    .as_ref()
                    .ok_or(BackendError::MissingConditioning("depth"))?;
                if depth.width != self.image_size || depth.height != self.image_size {
                    return Err(BackendError::Protocol(format!(
                        "depth is {}x{}, expected {}",
                        depth.width, depth.height, self.image_size
                    )));
                }
                let base = Self::prompt_color(&cond.prompt, cond.seed);
                let n = self.cells();
                let plane = n * n;
                let mut data = vec![0.0; 3 * plane];
                let mut block = Vec::with_capacity(self.factor * self.factor);
                for cy in 0..n {
                    for cx in 0..n {
                        block.clear();
                        for y in cy * self.factor..(cy + 1) * self.factor {
                            for x in cx * self.factor..(cx + 1) * self.factor {
                                block.push(depth.get(x, y));
                            }
                        }
                        let d = pairwise_sum(&block) / block.len() as f32;
                        let shade = 0.3 + 0.7 * d;
                        for c in 0..3 {
                            data[c * plane + cy * n + cx] = base[c] * shade;
                        }
                    }
                }
                Ok(Latent {
                    shape: self.latent_shape(),
                    data,
                })
            }
        }
    }

    fn box_encode(&self, image: &ColorImage) -> Result<Latent, BackendError> {
        if image.width != self.image_size || image.height != self.image_size {
            return Err(BackendError::Protocol(format!(
                "image is {}x{}, expected {}",
                image.width, image.height, self.image_size
            )));
        }
        let n = self.cells();
        let plane = n * n;
        let mut data = vec![0.0; 3 * plane];
        let mut block = Vec::with_capacity(self.factor * self.factor);
        for c in 0..3 {
            for cy in 0..n {
                for cx in 0..n {
                    block.clear();
                    for y in cy * self.factor..(cy + 1) * self.factor {
                        for x in cx * self.factor..(cx + 1) * self.factor {
                            block.push(image.get(x, y)[c]);
                        }
                    }
                    data[c * plane + cy * n + cx] = pairwise_sum(&block) / block.len() as f32;
                }
            }
        }
        Ok(Latent {
            shape: self.latent_shape(),
            data,
        })
    }

    fn check_shape(&self, latent: &Latent) -> Result<(), BackendError> {
        if latent.shape != self.latent_shape() || latent.data.len() != latent.shape.len() {
            return Err(BackendError::Protocol(format!(
                "latent shape {:?} does not match {:?}",
                latent.shape,
                self.latent_shape()
            )));
        }
        Ok(())
    }

    /// Noise level for a sampling step: 1 at step 0, falling linearly to 0.
    pub fn noise_level(&self, step: usize) -> f32 {
        if self.steps == 0 {
            0.0
        } else {
            (self.steps.saturating_sub(step)) as f32 / self.steps as f32
        }
    }
}

impl DenoiserBackend for MockDenoiser {
    fn step_count(&self) -> usize {
        self.steps
    }

    fn latent_shape(&self) -> LatentShape {
        LatentShape {
            channels: 3,
            height: self.cells(),
            width: self.cells(),
        }
    }

    fn image_size(&self) -> usize {
        self.image_size
    }

    fn encode(&mut self, image: &ColorImage) -> Result<Latent, BackendError> {
        assert!(self.factor.is_power_of_two(), "mock factor must be a power of two");
        self.box_encode(image)
    }

    fn decode(&mut self, latent: &Latent) -> Result<ColorImage, BackendError> {
        self.check_shape(latent)?;
        let n = self.cells();
        let plane = n * n;
        Ok(ColorImage::from_fn(self.image_size, self.image_size, |x, y| {
            let cell = (y / self.factor) * n + x / self.factor;
            [0, 1, 2].map(|c| latent.data[c * plane + cell])
        }))
    }

    fn add_noise(&mut self, latent: &Latent, step: usize, seed: u64) -> Result<Latent, BackendError> {
        self.check_shape(latent)?;
        let s = self.noise_level(step);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[seed.to_le_bytes(), (step as u64).to_le_bytes()].concat()));
        let data = latent
            .data
            .iter()
            .map(|&v| {
                let eps: f32 = rng.random();
                (1.0 - s) * v + s * eps
            })
            .collect();
        Ok(Latent {
            shape: latent.shape,
            data,
        })
    }

    fn denoise_step(
        &mut self,
        latent: &Latent,
        _step: usize,
        mode: DenoiseMode,
        cond: &Conditioning,
    ) -> Result<Latent, BackendError> {
        self.check_shape(latent)?;
        match mode {
            DenoiseMode::Depth => {
                let target = self.target_latent(cond)?;
                let r = self.depth_rate;
                Ok(Latent {
                    shape: latent.shape,
                    data: latent
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(&z, &t)| z + r * (t - z))
                        .collect(),
                })
            }
            DenoiseMode::Inpaint => {
                let mask = cond
                    .inpaint_mask
                    .as_ref()
                    .ok_or(BackendError::MissingConditioning("inpaint mask"))?;
                let (w, h) = (latent.shape.width, latent.shape.height);
                let plane = w * h;
                let mut out = latent.data.clone();
                for c in 0..latent.shape.channels {
                    let src = &latent.data[c * plane..(c + 1) * plane];
                    for y in 0..h {
                        for x in 0..w {
                            let i = y * w + x;
                            if !mask.free[i] {
                                continue;
                            }
                            let mut sum = 0.0;
                            let mut count = 0.0;
                            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                                    sum += src[ny as usize * w + nx as usize];
                                    count += 1.0;
                                }
                            }
                            out[c * plane + i] = src[i] + self.inpaint_rate * (sum / count - src[i]);
                        }
                    }
                }
                Ok(Latent {
                    shape: latent.shape,
                    data: out,
                })
            }
        }
    }
}
