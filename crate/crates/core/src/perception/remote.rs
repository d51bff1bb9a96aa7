//! JSON-over-HTTP client for an external perception service.
//!
//! Endpoints (all `POST`, `200` on success, `4xx` bodies carry `{"error": ...}`):
//! - `/v1/segment`  `{frames, prompt}` → `{masks}`
//! - `/v1/inpaint`  `{frames, masks}`  → `{frames}`
//! - `/v1/handpose` `{frames}`         → `{keypoints, confidence, boxes?}`
//!
//! Frames travel as base64 PNG, masks as base64 run-length codes (see [`wire`]).

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::h2rep::HandKeypointTrack;
use crate::mask::MaskSequence;
use crate::scene_sim::BBox;
use crate::video::VideoArray;

use super::HandEstimate;

pub mod wire {
    use std::io::Cursor;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use image::{ImageFormat, RgbImage};
    use serde::{Deserialize, Serialize};

    use crate::error::{Error, Result};
    use crate::mask::MaskSequence;
    use crate::video::{to_u8, Frame, VideoArray};

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct SegmentRequest {
        pub frames: Vec<String>,
        pub prompt: String,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct SegmentResponse {
        pub masks: Vec<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct InpaintRequest {
        pub frames: Vec<String>,
        pub masks: Vec<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct InpaintResponse {
        pub frames: Vec<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct HandposeRequest {
        pub frames: Vec<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct HandposeResponse {
        /// Per frame: `[thumb_base, thumb_tip, index_tip]`.
        pub keypoints: Vec<[[f64; 2]; 3]>,
        pub confidence: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub boxes: Option<Vec<Option<[f64; 4]>>>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub error: String,
    }

    pub fn encode_frames(video: &VideoArray) -> Vec<String> {
        (0..video.frames())
            .map(|t| {
                let f = video.frame_slice(t);
                let raw = f.iter().map(|&v| to_u8(v)).collect();
                let img = RgbImage::from_raw(video.width() as u32, video.height() as u32, raw)
                    .expect("buffer sized from video dims");
                let mut buf = Cursor::new(Vec::new());
                img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encode");
                STANDARD.encode(buf.into_inner())
            })
            .collect()
    }

    pub fn decode_frames(frames: &[String]) -> Result<VideoArray> {
        let mut out = Vec::with_capacity(frames.len());
        for (t, f) in frames.iter().enumerate() {
            let bytes = STANDARD.decode(f).map_err(|e| Error::Contract(format!("frame {t}: bad base64: {e}")))?;
            let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
                .map_err(|e| Error::Contract(format!("frame {t}: bad PNG: {e}")))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
            out.push(Frame { height: h as usize, width: w as usize, data });
        }
        VideoArray::from_frames(out)
    }

    /// Alternating run lengths (first run is unset pixels) as little-endian `u32`s.
    pub fn encode_mask_frame(bits: &[bool]) -> String {
        let mut runs: Vec<u32> = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        let bytes: Vec<u8> = runs.iter().flat_map(|r| r.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode_mask_frame(s: &str, pixels: usize) -> Result<Vec<bool>> {
        let bytes = STANDARD.decode(s).map_err(|e| Error::Contract(format!("bad mask base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Contract("mask run-length payload not a multiple of 4 bytes".into()));
        }
        let mut out = Vec::with_capacity(pixels);
        let mut value = false;
        for chunk in bytes.chunks_exact(4) {
            let n = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
            out.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
        if out.len() != pixels {
            return Err(Error::Contract(format!("mask decodes to {} pixels, expected {pixels}", out.len())));
        }
        Ok(out)
    }

    pub fn encode_masks(masks: &MaskSequence) -> Vec<String> {
        (0..masks.frames()).map(|t| encode_mask_frame(masks.frame_slice(t))).collect()
    }

    pub fn decode_masks(masks: &[String], height: usize, width: usize) -> Result<MaskSequence> {
        let mut data = Vec::with_capacity(masks.len() * height * width);
        for m in masks {
            data.extend(decode_mask_frame(m, height * width)?);
        }
        MaskSequence::from_data(masks.len(), height, width, data)
    }
}

/// Thread-safe; share one instance across workers for concurrent requests.
#[derive(Debug)]
pub struct RemoteClient {
    base_url: String,
    http: Client,
    max_retries: u32,
}

impl RemoteClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration, max_retries: u32) -> Result<Self> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), http, max_retries })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        let attempts = self.max_retries + 1;
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            let resp = match self.http.post(&url).json(body).send() {
                Ok(r) => r,
                Err(e) => {
                    tracing::debug!(%url, attempt, error = %e, "perception request failed");
                    last_status = None;
                    last_message = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_success() {
                return resp.json::<Resp>().map_err(|e| Error::Contract(format!("{url}: malformed response: {e}")));
            }
            let code = status.as_u16();
            let text = resp.text().unwrap_or_default();
            let message = serde_json::from_str::<wire::ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
            if status.is_client_error() {
                return Err(Error::Remote { endpoint: url, status: code, message });
            }
            last_status = Some(code);
            last_message = message;
        }
        Err(Error::Transport { endpoint: url, attempts, status: last_status, message: last_message })
    }

    pub fn segment(&self, video: &VideoArray, prompt: &str) -> Result<MaskSequence> {
        let req = wire::SegmentRequest { frames: wire::encode_frames(video), prompt: prompt.to_string() };
        let resp: wire::SegmentResponse = self.post("/v1/segment", &req)?;
        if resp.masks.len() != video.frames() {
            return Err(Error::Contract(format!("segment returned {} masks for {} frames", resp.masks.len(), video.frames())));
        }
        wire::decode_masks(&resp.masks, video.height(), video.width())
    }

    pub fn inpaint(&self, video: &VideoArray, masks: &MaskSequence) -> Result<VideoArray> {
        let req = wire::InpaintRequest { frames: wire::encode_frames(video), masks: wire::encode_masks(masks) };
        let resp: wire::InpaintResponse = self.post("/v1/inpaint", &req)?;
        wire::decode_frames(&resp.frames)
    }

    pub fn handpose(&self, video: &VideoArray) -> Result<HandEstimate> {
        let req = wire::HandposeRequest { frames: wire::encode_frames(video) };
        let resp: wire::HandposeResponse = self.post("/v1/handpose", &req)?;
        if resp.keypoints.len() != resp.confidence.len() {
            return Err(Error::Contract("handpose keypoints and confidence differ in length".into()));
        }
        let keypoints = HandKeypointTrack {
            thumb_base: resp.keypoints.iter().map(|k| k[0]).collect(),
            thumb_tip: resp.keypoints.iter().map(|k| k[1]).collect(),
            index_tip: resp.keypoints.iter().map(|k| k[2]).collect(),
            confidence: resp.confidence,
        };
        let boxes = match resp.boxes {
            Some(b) => b.into_iter().map(|o| o.map(|[x0, y0, x1, y1]| BBox { x0, y0, x1, y1 })).collect(),
            None => vec![None; keypoints.len()],
        };
        Ok(HandEstimate { keypoints, boxes })
    }
}
