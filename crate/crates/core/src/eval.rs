//! SSIM, background consistency and pose-following metrics, plus report I/O.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::mask::MaskSequence;
use crate::scene_sim::{ARM_COLOR, GRIPPER_COLOR, TIP_COLOR};
use crate::video::VideoArray;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// RGB distance (unit range) within which a pixel counts as tip-colored.
pub const TIP_COLOR_THRESHOLD: f64 = 0.35;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Normalized 2-D Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

struct SsimFrame<'a> {
    a: &'a [f64],
    b: &'a [f64],
    width: usize,
    window: &'a [f64],
}

impl SsimFrame<'_> {
    fn moment(&self, y0: usize, x0: usize, c: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for dy in 0..SSIM_WINDOW {
            for dx in 0..SSIM_WINDOW {
                let i = ((y0 + dy) * self.width + x0 + dx) * 3 + c;
                s += self.window[dy * SSIM_WINDOW + dx] * f(self.a[i], self.b[i]);
            }
        }
        s
    }

    /// SSIM of one channel over the window with top-left corner `(y0, x0)`.
    fn at(&self, y0: usize, x0: usize, c: usize) -> f64 {
        let mu_a = self.moment(y0, x0, c, |a, _| a);
        let mu_b = self.moment(y0, x0, c, |_, b| b);
        let var_a = self.moment(y0, x0, c, |a, _| a * a) - mu_a * mu_a;
        let var_b = self.moment(y0, x0, c, |_, b| b * b) - mu_b * mu_b;
        let cov = self.moment(y0, x0, c, |a, b| a * b) - mu_a * mu_b;
        let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
        num / den
    }
}

fn check_pair(a: &VideoArray, b: &VideoArray) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Contract(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "frames of {}x{} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Per-frame SSIM averaged over windows whose footprint `keep` accepts.
/// `None` when no window is accepted.
fn frame_ssim(a: &VideoArray, b: &VideoArray, t: usize, window: &[f64], keep: impl Fn(usize, usize) -> bool) -> Option<f64> {
    let f = SsimFrame { a: a.frame_slice(t), b: b.frame_slice(t), width: a.width(), window };
    let mut sum = 0.0;
    let mut n = 0usize;
    for y0 in 0..=a.height() - SSIM_WINDOW {
        for x0 in 0..=a.width() - SSIM_WINDOW {
            if !keep(y0, x0) {
                continue;
            }
            for c in 0..3 {
                sum += f.at(y0, x0, c);
            }
            n += 3;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean over frames of single-scale SSIM (valid windows, channels averaged).
pub fn ssim(a: &VideoArray, b: &VideoArray) -> Result<f64> {
    check_pair(a, b)?;
    if a.frames() == 0 {
        return Err(Error::Contract("empty video".into()));
    }
    let w = gaussian_window();
    let total: f64 = (0..a.frames()).map(|t| frame_ssim(a, b, t, &w, |_, _| true).unwrap()).sum();
    Ok(total / a.frames() as f64)
}

/// PSNR (unit peak) over the pixels selected by `mask`; infinite when they agree exactly.
pub fn masked_psnr(a: &VideoArray, b: &VideoArray, mask: &MaskSequence) -> Result<f64> {
    if !a.same_shape(b) || mask.shape() != a.shape() {
        return Err(Error::Contract(format!("shape mismatch {:?} vs {:?} vs mask {:?}", a.shape(), b.shape(), mask.shape())));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..3 {
            se += (a.data()[i * 3 + c] - b.data()[i * 3 + c]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Contract("empty mask".into()));
    }
    Ok(10.0 * (n as f64 / se).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundScore {
    /// Mean SSIM over frames with at least one usable window.
    pub score: Option<f64>,
    pub valid_frame_fraction: f64,
}

/// SSIM restricted to windows that do not touch `exclusion`.
pub fn background_consistency(gen: &VideoArray, reference: &VideoArray, exclusion: &MaskSequence) -> Result<BackgroundScore> {
    check_pair(gen, reference)?;
    if exclusion.shape() != gen.shape() {
        return Err(Error::Contract(format!(
            "exclusion mask {:?} does not match video {:?}",
            exclusion.shape(),
            gen.shape()
        )));
    }
    let (h, w) = (gen.height(), gen.width());
    let win = gaussian_window();
    let mut scores = Vec::new();
    for t in 0..gen.frames() {
        // Summed-area table of the mask for O(1) window tests.
        let mut sat = vec![0usize; (h + 1) * (w + 1)];
        for y in 0..h {
            for x in 0..w {
                sat[(y + 1) * (w + 1) + x + 1] = usize::from(exclusion.get(t, y, x)) + sat[y * (w + 1) + x + 1]
                    + sat[(y + 1) * (w + 1) + x]
                    - sat[y * (w + 1) + x];
            }
        }
        let blocked = |y0: usize, x0: usize| {
            let (y1, x1) = (y0 + SSIM_WINDOW, x0 + SSIM_WINDOW);
            sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] > 0
        };
        if let Some(s) = frame_ssim(gen, reference, t, &win, |y, x| !blocked(y, x)) {
            scores.push(s);
        }
    }
    let n = gen.frames().max(1) as f64;
    Ok(BackgroundScore {
        score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        valid_frame_fraction: scores.len() as f64 / n,
    })
}

fn near(p: [f64; 3], c: [f64; 3], threshold: f64) -> bool {
    let d2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
    d2 <= threshold * threshold
}

/// Pixels resembling the manipulator's reserved colors, dilated by `radius`.
pub fn manipulator_exclusion(video: &VideoArray, threshold: f64, radius: usize) -> MaskSequence {
    let (n, h, w) = video.shape();
    let mut m = MaskSequence::empty(n, h, w);
    for t in 0..n {
        for y in 0..h {
            for x in 0..w {
                let p = video.pixel(t, y, x);
                if [ARM_COLOR, GRIPPER_COLOR, TIP_COLOR].iter().any(|&c| near(p, c, threshold)) {
                    m.set(t, y, x, true);
                }
            }
        }
    }
    m.dilate(radius)
}

/// Centroid (pixel-center coordinates) of tip-colored pixels in frame `t`.
pub fn detect_tip(video: &VideoArray, t: usize, threshold: f64) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..video.height() {
        for x in 0..video.width() {
            if near(video.pixel(t, y, x), TIP_COLOR, threshold) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFollowResult {
    pub mean_px: f64,
    /// `None` where no tip pixels were found.
    pub per_frame: Vec<Option<f64>>,
    pub detection_fraction: f64,
}

pub fn pose_following_error(gen: &VideoArray, poses: &[Pose2D]) -> Result<PoseFollowResult> {
    pose_following_error_with(gen, poses, TIP_COLOR_THRESHOLD)
}

pub fn pose_following_error_with(gen: &VideoArray, poses: &[Pose2D], threshold: f64) -> Result<PoseFollowResult> {
    if poses.len() != gen.frames() {
        return Err(Error::Contract(format!("{} poses for {} frames", poses.len(), gen.frames())));
    }
    let per_frame: Vec<Option<f64>> = (0..gen.frames())
        .map(|t| detect_tip(gen, t, threshold).map(|c| (c[0] - poses[t].u).hypot(c[1] - poses[t].v)))
        .collect();
    let hits: Vec<f64> = per_frame.iter().flatten().copied().collect();
    if hits.is_empty() {
        return Err(Error::DetectorFailure);
    }
    Ok(PoseFollowResult {
        mean_px: hits.iter().sum::<f64>() / hits.len() as f64,
        detection_fraction: hits.len() as f64 / gen.frames() as f64,
        per_frame,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub id: String,
    pub ssim: Option<f64>,
    pub background_consistency: Option<f64>,
    pub valid_frame_fraction: f64,
    pub pose_follow_px: Option<f64>,
    pub tip_detection_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// Population statistics of the present values; `None` if there are none.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Summary { mean, std: var.sqrt(), count: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ssim: Option<Summary>,
    pub background_consistency: Option<Summary>,
    pub pose_follow_px: Option<Summary>,
    pub valid_frame_fraction: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    pub clips: Vec<ClipMetrics>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(clips: Vec<ClipMetrics>, seed: u64, config: serde_json::Value) -> Result<Self> {
        for c in &clips {
            let finite = [c.ssim, c.background_consistency, c.pose_follow_px].iter().flatten().all(|v| v.is_finite());
            if !finite || c.ssim.is_some_and(|s| !(-1.0..=1.0).contains(&s)) || c.pose_follow_px.is_some_and(|p| p < 0.0) {
                return Err(Error::Contract(format!("clip {}: metrics out of range", c.id)));
            }
        }
        let aggregate = Aggregate {
            ssim: Summary::of(clips.iter().map(|c| c.ssim)),
            background_consistency: Summary::of(clips.iter().map(|c| c.background_consistency)),
            pose_follow_px: Summary::of(clips.iter().map(|c| c.pose_follow_px)),
            valid_frame_fraction: Summary::of(clips.iter().map(|c| Some(c.valid_frame_fraction))),
        };
        Ok(Self { schema_version: REPORT_SCHEMA_VERSION, seed, config, clips, aggregate })
    }
}

/// Score one generated clip. `target` and `poses` are optional references;
/// the background comparison excludes manipulator-colored pixels in either video.
pub fn evaluate_clip(
    id: &str,
    gen: &VideoArray,
    target: Option<&VideoArray>,
    background: &VideoArray,
    poses: Option<&[Pose2D]>,
    dilation_radius: usize,
) -> Result<ClipMetrics> {
    let run = || -> Result<ClipMetrics> {
        let ssim_v = target.map(|t| ssim(gen, t)).transpose()?;
        let mut exclusion = manipulator_exclusion(gen, TIP_COLOR_THRESHOLD, dilation_radius);
        if let Some(t) = target {
            exclusion = exclusion.union(&manipulator_exclusion(t, TIP_COLOR_THRESHOLD, dilation_radius))?;
        }
        let bg = background_consistency(gen, background, &exclusion)?;
        let (pose, det) = match poses {
            None => (None, 0.0),
            Some(p) => match pose_following_error(gen, p) {
                Ok(r) => (Some(r.mean_px), r.detection_fraction),
                Err(Error::DetectorFailure) => (None, 0.0),
                Err(e) => return Err(e),
            },
        };
        Ok(ClipMetrics {
            id: id.to_string(),
            ssim: ssim_v,
            background_consistency: bg.score,
            valid_frame_fraction: bg.valid_frame_fraction,
            pose_follow_px: pose,
            tip_detection_fraction: det,
        })
    };
    run().map_err(|e| e.in_clip(id))
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let s = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: EvalReport = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Load { path: path.into(), reason: format!("schema version {}", r.schema_version) });
    }
    Ok(r)
}

/// One row per clip; empty cells for missing values.
pub fn write_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("id,ssim,background_consistency,valid_frame_fraction,pose_follow_px,tip_detection_fraction\n");
    for c in &report.clips {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.id,
            cell(c.ssim),
            cell(c.background_consistency),
            c.valid_frame_fraction,
            cell(c.pose_follow_px),
            c.tip_detection_fraction
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
