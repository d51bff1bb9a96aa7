//! Preprocessing, clip sampling, pair construction and dataset persistence.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clip::Clip;
use crate::error::{Error, Result};
use crate::geometry::{project_pose, CameraParams, Pose2DTrack};
use crate::h2rep::{compose_h2rep, surrogate_track, OverlaySpec, DEFAULT_MIN_CONFIDENCE};
use crate::perception::{Perception, HUMAN_PROMPT, ROBOT_PROMPT};
use crate::scene_sim::Pose6DoFTrajectory;
use crate::video::{quantize_u8, VideoArray};

/// Text condition shared by every robot training pair.
pub const ROBOT_TEXT_PROMPT: &str = "A robotic arm is interacting with objects.";
pub const MAX_CLIP_FRAMES: usize = 49;
pub const DEFAULT_TARGET_FPS: f64 = 10.0;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Source frame indices kept when resampling `n_src` frames from `src_fps` to `target_fps`.
pub fn resample_indices(n_src: usize, src_fps: f64, target_fps: f64) -> Result<Vec<usize>> {
    if !(target_fps > 0.0 && src_fps.is_finite() && target_fps.is_finite()) {
        return Err(Error::Contract(format!("invalid frame rates {src_fps} -> {target_fps}")));
    }
    if src_fps < target_fps {
        return Err(Error::Unsupported(format!("cannot upsample {src_fps} fps to {target_fps} fps")));
    }
    if n_src == 0 {
        return Err(Error::Contract("empty video".into()));
    }
    let ratio = src_fps / target_fps;
    // Tolerance absorbs representation error in the fps ratio (e.g. 29.97/9.99).
    let n_out = (((n_src - 1) as f64) / ratio + 1e-9).floor() as usize + 1;
    Ok((0..n_out).map(|k| ((k as f64 * ratio).round() as usize).min(n_src - 1)).collect())
}

/// Bilinear resize to `(height, width)` and nearest-frame resample to `target_fps`.
pub fn standardize(video: &VideoArray, src_fps: f64, target_res: (usize, usize), target_fps: f64) -> Result<VideoArray> {
    let idx = resample_indices(video.frames(), src_fps, target_fps)?;
    Ok(video.select_frames(&idx).resize_bilinear(target_res.0, target_res.1))
}

/// [`standardize`] applied to a clip and its ground truth. Also returns the kept source indices.
pub fn standardize_clip(clip: &Clip, target_res: (usize, usize), target_fps: f64) -> Result<(Clip, Vec<usize>)> {
    let idx = resample_indices(clip.frames(), clip.fps, target_fps).map_err(|e| e.in_clip(&clip.id))?;
    let out = clip.select_frames(&idx, target_fps);
    let out = if out.video.height() == target_res.0 && out.video.width() == target_res.1 {
        out
    } else {
        out.resized(target_res.0, target_res.1)
    };
    Ok((out, idx))
}

/// Largest `n' <= n` with `n' % 4 == 1` (0 for an empty input).
pub fn conforming_len(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        n - (n - 1) % 4
    }
}

pub fn trim_mod4(video: &VideoArray) -> VideoArray {
    video.window(0, conforming_len(video.frames()))
}

/// `(start, len)` of a seeded window of at most `max_frames` frames with `len % 4 == 1`.
pub fn sample_window(n: usize, max_frames: usize, seed: u64) -> Result<(usize, usize)> {
    let len = conforming_len(n.min(max_frames));
    if len == 0 {
        return Err(Error::Contract(format!("cannot cut a clip from {n} frames with max {max_frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=n - len);
    Ok((start, len))
}

pub fn sample_clip(
    video: &VideoArray,
    poses: &[crate::geometry::Pose2D],
    max_frames: usize,
    seed: u64,
) -> Result<(VideoArray, Pose2DTrack)> {
    if poses.len() != video.frames() {
        return Err(Error::Contract(format!("{} poses for {} frames", poses.len(), video.frames())));
    }
    let (start, len) = sample_window(video.frames(), max_frames, seed)?;
    Ok((video.window(start, len), poses[start..start + len].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub h2rep: VideoArray,
    pub target: VideoArray,
    pub prompt: String,
    pub source_id: String,
    pub fps: f64,
    pub poses: Pose2DTrack,
    pub camera: Option<CameraParams>,
    pub source_seed: Option<u64>,
    pub split: Split,
}

impl TrainingPair {
    pub fn frame_count(&self) -> usize {
        self.target.frames()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h2rep.same_shape(&self.target) {
            return Err(Error::Contract(format!(
                "pair {}: h2rep {:?} and target {:?} differ in shape",
                self.id,
                self.h2rep.shape(),
                self.target.shape()
            )));
        }
        let n = self.frame_count();
        if n % 4 != 1 {
            return Err(Error::Contract(format!("pair {}: frame count {n} is not 1 mod 4", self.id)));
        }
        if self.poses.len() != n {
            return Err(Error::Contract(format!("pair {}: {} poses for {n} frames", self.id, self.poses.len())));
        }
        Ok(())
    }

    /// Seeded training window of at most `max_frames`, cut identically from all streams.
    pub fn sample(&self, max_frames: usize, seed: u64) -> Result<TrainingPair> {
        let (start, len) = sample_window(self.frame_count(), max_frames, seed)?;
        Ok(TrainingPair {
            id: format!("{}@{start}", self.id),
            h2rep: self.h2rep.window(start, len),
            target: self.target.window(start, len),
            poses: self.poses[start..start + len].to_vec(),
            ..self.clone()
        })
    }
}

/// Compose the indicator video and snap it to the 8-bit grid used on disk.
///
/// Robot and human paths both end here.
pub fn compose_indicator_video(background: &VideoArray, poses: &[crate::geometry::Pose2D], spec: &OverlaySpec) -> Result<VideoArray> {
    Ok(compose_h2rep(background, poses, spec)?.quantized_u8())
}

/// Per-frame projection of the trajectory sample nearest each frame time (`k / fps`).
pub fn project_trajectory(traj: &Pose6DoFTrajectory, camera: &CameraParams, frames: usize, fps: f64) -> Result<Pose2DTrack> {
    let mut poses: Pose2DTrack = Vec::with_capacity(frames);
    let mut behind = Vec::new();
    for k in 0..frames {
        let i = traj.nearest_index(k as f64 / fps);
        match project_pose(camera, &traj.pose(i), poses.last()) {
            Ok(p) => poses.push(p),
            Err(Error::BehindCamera { .. }) => {
                behind.push(k);
                poses.push(crate::geometry::Pose2D::position_only(f64::NAN, f64::NAN));
            }
            Err(e) => return Err(e),
        }
    }
    if !behind.is_empty() {
        return Err(Error::Geometry(format!("end effector behind camera in frames {behind:?}")));
    }
    Ok(poses)
}

/// segment → inpaint → project → compose. The target is the clip itself.
pub fn build_robot_pair(
    clip: &Clip,
    traj: &Pose6DoFTrajectory,
    camera: &CameraParams,
    perception: &Perception,
    overlay: &OverlaySpec,
) -> Result<TrainingPair> {
    let run = || -> Result<TrainingPair> {
        let masks = perception.segment(clip, ROBOT_PROMPT)?;
        let inpainted = perception.inpaint(clip, &masks)?;
        if inpainted.report.flagged() {
            tracing::warn!(clip = %clip.id, mean_fills = inpainted.report.mean_fills, "inpainting fell back to mean color");
        }
        let poses = project_trajectory(traj, camera, clip.frames(), clip.fps)?;
        let h2rep = compose_indicator_video(&inpainted.video, &poses, overlay)?;
        Ok(TrainingPair {
            id: clip.id.clone(),
            h2rep,
            target: clip.video.clone(),
            prompt: ROBOT_TEXT_PROMPT.to_string(),
            source_id: clip.id.clone(),
            fps: clip.fps,
            poses,
            camera: Some(camera.clone()),
            source_seed: None,
            split: Split::Train,
        })
    };
    run().map_err(|e| e.in_clip(&clip.id))
}

/// Indicator video for a human clip, plus the surrogate pose track that drew it.
pub fn build_human_h2rep(clip: &Clip, perception: &Perception, overlay: &OverlaySpec) -> Result<(VideoArray, Pose2DTrack)> {
    build_human_sample(clip, perception, overlay).map(|s| (s.h2rep, s.poses))
}

/// Everything the human path produces for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanSample {
    pub h2rep: VideoArray,
    pub poses: Pose2DTrack,
    /// Manipulator-free background the indicator was drawn on.
    pub background: VideoArray,
}

pub fn build_human_sample(clip: &Clip, perception: &Perception, overlay: &OverlaySpec) -> Result<HumanSample> {
    let run = || -> Result<HumanSample> {
        let masks = perception.segment(clip, HUMAN_PROMPT)?;
        let inpainted = perception.inpaint(clip, &masks)?;
        let est = perception.estimate_hand_keypoints(clip)?;
        let poses = surrogate_track(&est.keypoints, DEFAULT_MIN_CONFIDENCE)?;
        let h2rep = compose_indicator_video(&inpainted.video, &poses, overlay)?;
        Ok(HumanSample { h2rep, poses, background: inpainted.video })
    };
    run().map_err(|e| e.in_clip(&clip.id))
}

/// Map `f` over `items` on a pool of `workers` threads, preserving order.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Paths relative to the dataset root.
    pub h2rep_dir: PathBuf,
    pub target_dir: PathBuf,
    pub meta: PathBuf,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub id: String,
    pub prompt: String,
    pub source_id: String,
    pub fps: f64,
    pub camera: Option<CameraParams>,
    pub poses: Pose2DTrack,
    pub source_seed: Option<u64>,
}

fn check_on_grid(id: &str, what: &str, v: &VideoArray) -> Result<()> {
    if let Some(i) = v.data().iter().position(|&x| quantize_u8(x) != x) {
        return Err(Error::Contract(format!(
            "pair {id}: {what} value {} at index {i} is not on the 8-bit grid",
            v.data()[i]
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

/// Write pairs under `dir`. Arrays must already lie on the 8-bit grid so that
/// loading reproduces them exactly.
pub fn save_manifest(pairs: &[TrainingPair], dir: &Path) -> Result<DatasetManifest> {
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Contract(format!("duplicate pair id {}", p.id)));
        }
        p.validate()?;
        check_on_grid(&p.id, "h2rep", &p.h2rep)?;
        check_on_grid(&p.id, "target", &p.target)?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let rel = PathBuf::from(format!("pair_{i:05}"));
        let root = dir.join(&rel);
        p.h2rep.save_png_dir(&root.join("h2rep"))?;
        p.target.save_png_dir(&root.join("target"))?;
        let meta = PairMeta {
            id: p.id.clone(),
            prompt: p.prompt.clone(),
            source_id: p.source_id.clone(),
            fps: p.fps,
            camera: p.camera.clone(),
            poses: p.poses.clone(),
            source_seed: p.source_seed,
        };
        write_json(&root.join("meta.json"), &meta)?;
        let (frame_count, height, width) = p.target.shape();
        entries.push(ManifestEntry {
            id: p.id.clone(),
            split: p.split,
            h2rep_dir: rel.join("h2rep"),
            target_dir: rel.join("target"),
            meta: rel.join("meta.json"),
            frame_count,
            height,
            width,
        });
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, entries };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Read and validate `dir/manifest.json`: version, unique ids, referenced files present.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Load {
            path,
            reason: format!("manifest version {} (expected {MANIFEST_VERSION})", manifest.version),
        });
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Load { path, reason: format!("duplicate pair id {}", e.id) });
        }
        for p in [&e.h2rep_dir, &e.target_dir, &e.meta] {
            if !dir.join(p).exists() {
                return Err(Error::Load {
                    path: dir.join(p),
                    reason: format!("missing file referenced by pair {}", e.id),
                });
            }
        }
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn load_pair(&self, dir: &Path, index: usize) -> Result<TrainingPair> {
        let e = &self.entries[index];
        let run = || -> Result<TrainingPair> {
            let meta: PairMeta = read_json(&dir.join(&e.meta))?;
            let h2rep = VideoArray::load_png_dir(&dir.join(&e.h2rep_dir))?;
            let target = VideoArray::load_png_dir(&dir.join(&e.target_dir))?;
            if target.shape() != (e.frame_count, e.height, e.width) {
                return Err(Error::Load {
                    path: dir.join(&e.target_dir),
                    reason: format!("shape {:?} disagrees with manifest", target.shape()),
                });
            }
            let pair = TrainingPair {
                id: e.id.clone(),
                h2rep,
                target,
                prompt: meta.prompt,
                source_id: meta.source_id,
                fps: meta.fps,
                poses: meta.poses,
                camera: meta.camera,
                source_seed: meta.source_seed,
                split: e.split,
            };
            pair.validate()?;
            Ok(pair)
        };
        run().map_err(|err| err.in_clip(&e.id))
    }

    pub fn load_pairs(&self, dir: &Path) -> Result<Vec<TrainingPair>> {
        (0..self.entries.len()).map(|i| self.load_pair(dir, i)).collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrainingPair>> {
    load_manifest(dir)?.load_pairs(dir)
}
