use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{BackendError, Conditioning, DenoiseMode, DenoiserBackend, Latent, LatentShape};
use crate::canvas::{ColorImage, Plane};

const MAX_RESPONSE_BYTES: u64 = 256 << 20;

/// A tensor on the wire: row-major little-endian f32, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl WireTensor {
    pub fn encode(shape: Vec<usize>, values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f32>, BackendError> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| BackendError::Protocol(format!("bad base64: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 4 {
            return Err(BackendError::Protocol(format!(
                "tensor of shape {:?} carries {} bytes",
                self.shape,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Images travel as `[height, width, 3]`.
    pub fn from_image(image: &ColorImage) -> Self {
        let flat: Vec<f32> = image.data.iter().flatten().copied().collect();
        Self::encode(vec![image.height, image.width, 3], &flat)
    }

    pub fn to_image(&self) -> Result<ColorImage, BackendError> {
        let [h, w, 3] = self.shape[..] else {
            return Err(BackendError::Protocol(format!("image shape {:?}", self.shape)));
        };
        let flat = self.decode()?;
        Ok(ColorImage {
            width: w,
            height: h,
            data: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub fn from_latent(latent: &Latent) -> Self {
        let s = latent.shape;
        Self::encode(vec![s.channels, s.height, s.width], &latent.data)
    }

    pub fn to_latent(&self) -> Result<Latent, BackendError> {
        let [channels, height, width] = self.shape[..] else {
            return Err(BackendError::Protocol(format!("latent shape {:?}", self.shape)));
        };
        Ok(Latent {
            shape: LatentShape {
                channels,
                height,
                width,
            },
            data: self.decode()?,
        })
    }

    fn from_plane(plane: &Plane) -> Self {
        Self::encode(vec![plane.height, plane.width], &plane.data)
    }
}

/// Response of `GET /meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub latent_shape: [usize; 3],
    pub steps: usize,
    pub image_size: usize,
    #[serde(default)]
    pub models: serde_json::Value,
}

#[derive(Serialize)]
struct SessionRequest<'a> {
    prompt: &'a str,
    guidance_scale: f32,
    steps: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct SessionResponse {
    session: String,
}

#[derive(Deserialize)]
struct LatentResponse {
    latent: WireTensor,
}

#[derive(Deserialize)]
struct ImageResponse {
    image: WireTensor,
}

#[derive(Serialize)]
struct DenoiseRequest<'a> {
    session: &'a str,
    latent: WireTensor,
    step: usize,
    mode: DenoiseMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<WireTensor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<WireTensor>,
}

/// Client for the model server's JSON protocol.
pub struct HttpDenoiser {
    base: String,
    agent: Agent,
    meta: BackendMeta,
    session: Option<String>,
}

impl std::fmt::Debug for HttpDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpDenoiser")
            .field("base", &self.base)
            .field("meta", &self.meta)
            .field("session", &self.session)
            .finish()
    }
}

impl HttpDenoiser {
    /// Connects and reads `/meta`. Fails fast if the server cannot be reached
    /// within `connect_timeout`.
    pub fn connect(base_url: &str, connect_timeout: Duration) -> Result<Self, BackendError> {
        let agent: Agent = Agent::config_builder()
            .timeout_connect(Some(connect_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/').to_string();
        let mut resp = agent
            .get(format!("{base}/meta"))
            .call()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let meta: BackendMeta = read_body(&mut resp)?;
        Ok(Self {
            base,
            agent,
            meta,
            session: None,
        })
    }

    pub fn meta(&self) -> &BackendMeta {
        &self.meta
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    fn session_id(&self) -> Result<&str, BackendError> {
        self.session
            .as_deref()
            .ok_or_else(|| BackendError::Protocol("no session; call begin_session first".into()))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, BackendError> {
        let mut resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        read_body(&mut resp)
    }
}

fn read_body<T: DeserializeOwned>(resp: &mut ureq::http::Response<ureq::Body>) -> Result<T, BackendError> {
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .with_config()
        .limit(MAX_RESPONSE_BYTES)
        .read_to_string()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(BackendError::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("bad response: {e}")))
}

impl DenoiserBackend for HttpDenoiser {
    fn step_count(&self) -> usize {
        self.meta.steps
    }

    fn latent_shape(&self) -> LatentShape {
        let [channels, height, width] = self.meta.latent_shape;
        LatentShape {
            channels,
            height,
            width,
        }
    }

    fn image_size(&self) -> usize {
        self.meta.image_size
    }

    fn begin_session(&mut self, cond: &Conditioning) -> Result<(), BackendError> {
        let resp: SessionResponse = self.post(
            "/session",
            &SessionRequest {
                prompt: &cond.prompt,
                guidance_scale: cond.guidance_scale,
                steps: self.meta.steps,
                seed: cond.seed,
            },
        )?;
        self.session = Some(resp.session);
        Ok(())
    }

    fn encode(&mut self, image: &ColorImage) -> Result<Latent, BackendError> {
        let session = self.session_id()?;
        let resp: LatentResponse = self.post(
            "/encode",
            &serde_json::json!({ "session": session, "image": WireTensor::from_image(image) }),
        )?;
        resp.latent.to_latent()
    }

    fn decode(&mut self, latent: &Latent) -> Result<ColorImage, BackendError> {
        let session = self.session_id()?;
        let resp: ImageResponse = self.post(
            "/decode",
            &serde_json::json!({ "session": session, "latent": WireTensor::from_latent(latent) }),
        )?;
        resp.image.to_image()
    }

    /// The noise stream is owned by the session, which was created with the run seed.
    fn add_noise(&mut self, latent: &Latent, step: usize, _seed: u64) -> Result<Latent, BackendError> {
        let session = self.session_id()?;
        let resp: LatentResponse = self.post(
            "/add_noise",
            &serde_json::json!({
                "session": session,
                "latent": WireTensor::from_latent(latent),
                "step": step,
            }),
        )?;
        resp.latent.to_latent()
    }

    fn denoise_step(
        &mut self,
        latent: &Latent,
        step: usize,
        mode: DenoiseMode,
        cond: &Conditioning,
    ) -> Result<Latent, BackendError> {
        let session = self.session_id()?;
        let (depth, mask) = match mode {
            DenoiseMode::Depth => {
                let d = cond.depth.as_ref().ok_or(BackendError::MissingConditioning("depth"))?;
                (Some(WireTensor::from_plane(d)), None)
            }
            DenoiseMode::Inpaint => {
                let m = cond
                    .inpaint_mask
                    .as_ref()
                    .ok_or(BackendError::MissingConditioning("inpaint mask"))?;
                let flat: Vec<f32> = m.free.iter().map(|&f| f as u8 as f32).collect();
                (None, Some(WireTensor::encode(vec![m.height, m.width], &flat)))
            }
        };
        let resp: LatentResponse = self.post(
            "/denoise_step",
            &DenoiseRequest {
                session,
                latent: WireTensor::from_latent(latent),
                step,
                mode,
                depth,
                mask,
            },
        )?;
        resp.latent.to_latent()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_bitwise() {
        let values = [0.0, -1.5, f32::MIN_POSITIVE, 1e30, 0.1];
        let t = WireTensor::encode(vec![5], &values);
        assert_eq!(t.decode().unwrap(), values);
        // 1.0f32 little-endian is 00 00 80 3f.
        assert_eq!(WireTensor::encode(vec![1], &[1.0]).data, "AACAPw==");
    }

    #[test]
    fn truncated_tensor_is_a_protocol_error() {
        let mut t = WireTensor::encode(vec![2], &[1.0, 2.0]);
        t.shape = vec![3];
        assert!(matches!(t.decode(), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn image_layout_is_hwc() {
        let img = ColorImage::from_fn(2, 1, |x, _| [x as f32, 0.5, 1.0]);
        let t = WireTensor::from_image(&img);
        assert_eq!(t.shape, vec![1, 2, 3]);
        assert_eq!(t.decode().unwrap(), vec![0.0, 0.5, 1.0, 1.0, 0.5, 1.0]);
        assert_eq!(t.to_image().unwrap(), img);
    }
}
