//! Segmentation, video inpainting and hand-pose estimation behind one
//! backend switch: simulator oracle, a self-contained naive inpainter, or a
//! remote HTTP service.

mod naive;
mod oracle;
pub mod remote;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clip::Clip;
use crate::error::{Error, Result};
use crate::h2rep::HandKeypointTrack;
use crate::mask::MaskSequence;
use crate::scene_sim::BBox;
use crate::video::VideoArray;

pub use naive::inpaint_temporal_median;
pub use remote::RemoteClient;

pub const ROBOT_PROMPT: &str = "robotic arm";
pub const HUMAN_PROMPT: &str = "person";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Naive,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionBackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub dilation_radius: usize,
}

impl Default for PerceptionBackendConfig {
    fn default() -> Self {
        Self { kind: BackendKind::Oracle, endpoint_url: None, timeout_s: 30.0, max_retries: 2, dilation_radius: 2 }
    }
}

impl PerceptionBackendConfig {
    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn naive() -> Self {
        Self { kind: BackendKind::Naive, ..Self::default() }
    }

    pub fn remote(url: impl Into<String>) -> Self {
        Self { kind: BackendKind::Remote, endpoint_url: Some(url.into()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Remote && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config("remote backend requires endpoint_url".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::Config("backend timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Backend choice for each perception capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSelection {
    pub segment: PerceptionBackendConfig,
    pub inpaint: PerceptionBackendConfig,
    pub handpose: PerceptionBackendConfig,
}

impl Default for BackendSelection {
    fn default() -> Self {
        Self {
            segment: PerceptionBackendConfig::oracle(),
            inpaint: PerceptionBackendConfig::oracle(),
            handpose: PerceptionBackendConfig::oracle(),
        }
    }
}

impl BackendSelection {
    pub fn validate(&self) -> Result<()> {
        self.segment.validate()?;
        self.inpaint.validate()?;
        self.handpose.validate()?;
        if self.segment.kind == BackendKind::Naive {
            return Err(Error::Config("segment has no naive backend (use oracle or remote)".into()));
        }
        if self.handpose.kind == BackendKind::Naive {
            return Err(Error::Config("handpose has no naive backend (use oracle or remote)".into()));
        }
        Ok(())
    }
}

/// A resolved backend, ready to serve requests.
#[derive(Debug, Clone)]
pub enum Backend {
    Oracle,
    Naive,
    Remote(Arc<RemoteClient>),
}

impl Backend {
    pub fn from_config(config: &PerceptionBackendConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            BackendKind::Oracle => Backend::Oracle,
            BackendKind::Naive => Backend::Naive,
            BackendKind::Remote => Backend::Remote(Arc::new(RemoteClient::new(
                config.endpoint_url.clone().unwrap_or_default(),
                Duration::from_secs_f64(config.timeout_s),
                config.max_retries,
            )?)),
        })
    }
}

/// All three capabilities, resolved from a [`BackendSelection`].
#[derive(Debug, Clone)]
pub struct Perception {
    pub segmenter: Backend,
    pub inpainter: Backend,
    pub hand_estimator: Backend,
    pub dilation_radius: usize,
}

impl Perception {
    pub fn new(selection: &BackendSelection) -> Result<Self> {
        selection.validate()?;
        Ok(Self {
            segmenter: Backend::from_config(&selection.segment)?,
            inpainter: Backend::from_config(&selection.inpaint)?,
            hand_estimator: Backend::from_config(&selection.handpose)?,
            dilation_radius: selection.inpaint.dilation_radius,
        })
    }

    pub fn oracle() -> Self {
        Self::new(&BackendSelection::default()).expect("oracle selection is valid")
    }

    pub fn segment(&self, clip: &Clip, prompt: &str) -> Result<MaskSequence> {
        segment(clip, prompt, &self.segmenter)
    }

    pub fn inpaint(&self, clip: &Clip, masks: &MaskSequence) -> Result<InpaintOutput> {
        inpaint(clip, masks, &self.inpainter, self.dilation_radius)
    }

    pub fn estimate_hand_keypoints(&self, clip: &Clip) -> Result<HandEstimate> {
        estimate_hand_keypoints(clip, &self.hand_estimator)
    }
}

/// Per-frame mask of the prompted entity.
pub fn segment(clip: &Clip, prompt: &str, backend: &Backend) -> Result<MaskSequence> {
    let masks = match backend {
        Backend::Oracle => oracle::segment(clip, prompt)?,
        Backend::Naive => return Err(Error::Unsupported("naive backend cannot segment".into())),
        Backend::Remote(client) => client.segment(&clip.video, prompt)?,
    };
    check_alignment(&clip.video, &masks)?;
    Ok(masks)
}

/// Bookkeeping from an inpainting pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintReport {
    pub masked_pixels: usize,
    pub temporal_fills: usize,
    pub spatial_fills: usize,
    /// Pixels with no usable observation, filled with the clip mean color.
    pub mean_fills: usize,
}

impl InpaintReport {
    pub fn flagged(&self) -> bool {
        self.mean_fills > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutput {
    pub video: VideoArray,
    pub report: InpaintReport,
}

/// Remove the masked entity. Masks are dilated by `dilation_radius` first;
/// pixels outside the dilated mask are returned untouched.
pub fn inpaint(clip: &Clip, masks: &MaskSequence, backend: &Backend, dilation_radius: usize) -> Result<InpaintOutput> {
    check_alignment(&clip.video, masks)?;
    let dilated = masks.dilate(dilation_radius);
    let (filled, report) = match backend {
        Backend::Oracle => oracle::inpaint(clip, &dilated)?,
        Backend::Naive => naive::inpaint_temporal_median(&clip.video, &dilated),
        Backend::Remote(client) => {
            let v = client.inpaint(&clip.video, &dilated)?;
            if !v.same_shape(&clip.video) {
                return Err(Error::Contract("remote inpaint returned a differently shaped video".into()));
            }
            let report = InpaintReport { masked_pixels: dilated.total(), ..Default::default() };
            (v, report)
        }
    };
    Ok(InpaintOutput { video: restore_unmasked(&clip.video, &filled, &dilated), report })
}

fn restore_unmasked(original: &VideoArray, filled: &VideoArray, mask: &MaskSequence) -> VideoArray {
    let mut out = original.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            out.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&filled.data()[i * 3..i * 3 + 3]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandEstimate {
    pub keypoints: HandKeypointTrack,
    /// Hand bounding box per frame, when detected.
    pub boxes: Vec<Option<BBox>>,
}

pub fn estimate_hand_keypoints(clip: &Clip, backend: &Backend) -> Result<HandEstimate> {
    let est = match backend {
        Backend::Oracle => oracle::hand_keypoints(clip)?,
        Backend::Naive => return Err(Error::Unsupported("naive backend cannot estimate hand pose".into())),
        Backend::Remote(client) => client.handpose(&clip.video)?,
    };
    est.keypoints.validate()?;
    if est.keypoints.len() != clip.frames() {
        return Err(Error::Contract(format!(
            "hand track has {} frames, clip has {}",
            est.keypoints.len(),
            clip.frames()
        )));
    }
    Ok(est)
}

fn check_alignment(video: &VideoArray, masks: &MaskSequence) -> Result<()> {
    if video.shape() != masks.shape() {
        return Err(Error::Contract(format!(
            "mask shape {:?} does not match video {:?}",
            masks.shape(),
            video.shape()
        )));
    }
    Ok(())
}
