//! On-disk layout of rendered clips and translation outputs.

use std::fs;
use std::path::{Path, PathBuf};

use h2r_core::geometry::Pose2DTrack;
use h2r_core::h2rep::HandKeypointTrack;
use h2r_core::scene_sim::{ActorKind, Pose6DoFTrajectory, RenderMetadata, SceneSpec};
use h2r_core::{CameraParams, Clip, MaskSequence, SimTruth, VideoArray};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLIP_META: &str = "clip.json";
pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const STAGE_MARKER: &str = "stage.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub actor: ActorKind,
    pub seed: u64,
    pub fps: f64,
    pub camera: CameraParams,
    pub trajectory: Pose6DoFTrajectory,
    pub scene: SceneSpec,
    pub render: RenderMetadata,
    pub keypoints: Option<HandKeypointTrack>,
}

/// Stage directories under one run root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn robot_clips(&self) -> PathBuf {
        self.data().join("robot")
    }

    pub fn human_clips(&self) -> PathBuf {
        self.data().join("human")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn translate(&self) -> PathBuf {
        self.root.join("translate")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> h2r_core::Result<T> {
    let s = fs::read_to_string(path).map_err(|e| h2r_core::Error::Load { path: path.into(), reason: e.to_string() })?;
    serde_json::from_str(&s).map_err(|e| h2r_core::Error::Load { path: path.into(), reason: e.to_string() })
}

pub fn save_clip(dir: &Path, meta: &ClipMeta, clip: &Clip) -> h2r_core::Result<()> {
    clip.video.save_png_dir(&dir.join("video"))?;
    if let Some(truth) = &clip.truth {
        truth.background.save_png_dir(&dir.join("background"))?;
        truth.manipulator_mask.save_png_dir(&dir.join("mask"))?;
    }
    let path = dir.join(CLIP_META);
    let s = serde_json::to_string_pretty(meta).expect("clip meta serializes");
    fs::write(&path, s).map_err(|e| h2r_core::Error::Load { path, reason: e.to_string() })
}

/// A rendered clip with its simulator truth.
pub fn load_clip(dir: &Path) -> h2r_core::Result<(ClipMeta, Clip)> {
    let meta: ClipMeta = read_json(&dir.join(CLIP_META))?;
    let video = VideoArray::load_png_dir(&dir.join("video"))?;
    let truth = SimTruth {
        manipulator_mask: MaskSequence::load_png_dir(&dir.join("mask"))?,
        background: VideoArray::load_png_dir(&dir.join("background"))?,
        keypoints: meta.keypoints.clone(),
        hand_boxes: meta.render.hand_boxes.clone(),
    };
    let clip = Clip { id: meta.id.clone(), video, fps: meta.fps, truth: Some(truth) };
    Ok((meta, clip))
}

/// Sorted subdirectories of `dir`.
pub fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// One translated clip on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub id: String,
    pub h2rep: VideoArray,
    pub generated: VideoArray,
    pub background: VideoArray,
    pub poses: Pose2DTrack,
}

impl Translation {
    pub fn save(&self, dir: &Path) -> h2r_core::Result<()> {
        self.h2rep.save_png_dir(&dir.join("h2rep"))?;
        self.generated.save_png_dir(&dir.join("generated"))?;
        self.background.save_png_dir(&dir.join("background"))?;
        let path = dir.join("poses.json");
        let s = serde_json::to_string_pretty(&(&self.id, &self.poses)).expect("poses serialize");
        fs::write(&path, s).map_err(|e| h2r_core::Error::Load { path, reason: e.to_string() })
    }

    pub fn load(dir: &Path) -> h2r_core::Result<Self> {
        let (id, poses): (String, Pose2DTrack) = read_json(&dir.join("poses.json"))?;
        Ok(Self {
            id,
            h2rep: VideoArray::load_png_dir(&dir.join("h2rep"))?,
            generated: VideoArray::load_png_dir(&dir.join("generated"))?,
            background: VideoArray::load_png_dir(&dir.join("background"))?,
            poses,
        })
    }
}
