//! The shared human/robot representation: a manipulator-free background with a
//! translucent position dot and orientation arrow drawn on top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose2DTrack, MIN_DIRECTION_PX};
use crate::raster;
use crate::video::{Frame, VideoArray};

/// Indicator geometry is authored for 64x64 frames and scaled with resolution.
pub const REFERENCE_SIZE: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlaySpec {
    pub dot_color: [f64; 3],
    pub dot_radius: f64,
    pub arrow_color: [f64; 3],
    pub arrow_length: f64,
    pub arrow_thickness: f64,
    pub alpha: f64,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            dot_color: [1.0, 0.0, 0.0],
            dot_radius: 3.0,
            arrow_color: [0.0, 0.0, 1.0],
            arrow_length: 12.0,
            arrow_thickness: 2.0,
            alpha: 0.4,
        }
    }
}

impl OverlaySpec {
    /// Default geometry scaled to a `width × height` frame.
    pub fn for_resolution(width: usize, height: usize) -> Self {
        let s = width.min(height) as f64 / REFERENCE_SIZE;
        let d = Self::default();
        Self {
            dot_radius: (d.dot_radius * s).max(1.0),
            arrow_length: (d.arrow_length * s).max(d.dot_radius * s).max(1.0),
            arrow_thickness: (d.arrow_thickness * s).max(1.0),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("overlay alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.dot_radius < 1.0 {
            return Err(Error::Config(format!("dot_radius must be >= 1, got {}", self.dot_radius)));
        }
        if self.arrow_length < self.dot_radius {
            return Err(Error::Config("arrow_length must be >= dot_radius".into()));
        }
        if self.arrow_thickness <= 0.0 {
            return Err(Error::Config("arrow_thickness must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn mix(a: f64, b: f64, alpha: f64) -> f64 {
    ((1.0 - alpha) * a + alpha * b).clamp(0.0, 1.0)
}

/// `(1 − α)·a + α·b`, elementwise.
pub fn blend(a: &Frame, b: &Frame, alpha: f64) -> Result<Frame> {
    if !a.same_shape(b) {
        return Err(Error::Contract(format!(
            "blend shape mismatch: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| mix(x, y, alpha)).collect();
    Ok(Frame { height: a.height, width: a.width, data })
}

/// Rendered indicator: colors where drawn, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub color: Frame,
    pub coverage: Vec<bool>,
}

impl Overlay {
    pub fn covered(&self, y: usize, x: usize) -> bool {
        self.coverage[y * self.color.width + x]
    }

    pub fn coverage_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

pub fn render_pose_overlay(pose: &Pose2D, spec: &OverlaySpec, width: usize, height: usize) -> Overlay {
    let mut color = Frame::zeros(height, width);
    let mut coverage = vec![false; width * height];
    let mut paint = |x: usize, y: usize, rgb: [f64; 3]| {
        color.set_pixel(y, x, rgb);
        coverage[y * width + x] = true;
    };

    if pose.valid {
        let [dx, dy] = pose.d;
        let head_len = spec.arrow_length / 3.0;
        let head_half = spec.arrow_thickness + 0.5;
        let shaft_end = spec.arrow_length - head_len;
        let at = |s: f64| [pose.u + s * dx, pose.v + s * dy];
        let base = at(shaft_end);
        raster::capsule([pose.u, pose.v], base, spec.arrow_thickness, width, height, |x, y| {
            paint(x, y, spec.arrow_color)
        });
        let (nx, ny) = (-dy, dx);
        let tri = [
            at(spec.arrow_length),
            [base[0] + nx * head_half, base[1] + ny * head_half],
            [base[0] - nx * head_half, base[1] - ny * head_half],
        ];
        raster::triangle(tri, width, height, |x, y| paint(x, y, spec.arrow_color));
    }
    raster::disk(pose.u, pose.v, spec.dot_radius, width, height, |x, y| paint(x, y, spec.dot_color));

    Overlay { color, coverage }
}

/// Blend the indicator into one frame, touching only covered pixels.
pub fn compose_frame(background: &Frame, pose: &Pose2D, spec: &OverlaySpec) -> Frame {
    let overlay = render_pose_overlay(pose, spec, background.width, background.height);
    let mut out = background.clone();
    for (i, covered) in overlay.coverage.iter().enumerate() {
        if *covered {
            for k in 0..3 {
                out.data[i * 3 + k] = mix(background.data[i * 3 + k], overlay.color.data[i * 3 + k], spec.alpha);
            }
        }
    }
    out
}

/// Compose a whole H2Rep video. Used identically by the robot and human pipelines.
pub fn compose_h2rep(background: &VideoArray, poses: &[Pose2D], spec: &OverlaySpec) -> Result<VideoArray> {
    if poses.len() != background.frames() {
        return Err(Error::Contract(format!(
            "pose track has {} entries for {} frames",
            poses.len(),
            background.frames()
        )));
    }
    spec.validate()?;
    let mut out = background.clone();
    for (t, pose) in poses.iter().enumerate() {
        let frame = compose_frame(&background.frame(t), pose, spec);
        out.set_frame(t, &frame)?;
    }
    Ok(out)
}

/// Per-frame thumb and index keypoints in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandKeypointTrack {
    pub thumb_base: Vec<[f64; 2]>,
    pub thumb_tip: Vec<[f64; 2]>,
    pub index_tip: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.3;

impl HandKeypointTrack {
    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }

    /// Track with no detections.
    pub fn undetected(frames: usize) -> Self {
        Self {
            thumb_base: vec![[0.0; 2]; frames],
            thumb_tip: vec![[0.0; 2]; frames],
            index_tip: vec![[0.0; 2]; frames],
            confidence: vec![0.0; frames],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.confidence.len();
        if self.thumb_base.len() != n || self.thumb_tip.len() != n || self.index_tip.len() != n {
            return Err(Error::Contract("keypoint lists differ in length".into()));
        }
        let finite = |v: &[[f64; 2]]| v.iter().all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite(&self.thumb_base) || !finite(&self.thumb_tip) || !finite(&self.index_tip) {
            return Err(Error::Contract("non-finite keypoint coordinate".into()));
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn select_frames(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<[f64; 2]>| indices.iter().map(|&i| v[i]).collect();
        Self {
            thumb_base: pick(&self.thumb_base),
            thumb_tip: pick(&self.thumb_tip),
            index_tip: pick(&self.index_tip),
            confidence: indices.iter().map(|&i| self.confidence[i]).collect(),
        }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        let s = |v: &Vec<[f64; 2]>| v.iter().map(|p| [p[0] * sx, p[1] * sy]).collect();
        Self {
            thumb_base: s(&self.thumb_base),
            thumb_tip: s(&self.thumb_tip),
            index_tip: s(&self.index_tip),
            confidence: self.confidence.clone(),
        }
    }
}

/// Position at the index/thumb tip midpoint, direction along the thumb.
///
/// Returns `Ok(None)` when the frame's confidence is below `min_confidence`.
/// A degenerate thumb holds `prev`'s direction, or yields an invalid direction.
pub fn surrogate_hand_pose(
    kps: &HandKeypointTrack,
    frame_index: usize,
    prev: Option<&Pose2D>,
    min_confidence: f64,
) -> Result<Option<Pose2D>> {
    if frame_index >= kps.len() {
        return Err(Error::Contract(format!("frame {frame_index} beyond keypoint track of {}", kps.len())));
    }
    if kps.confidence[frame_index] < min_confidence {
        return Ok(None);
    }
    let (it, tt, tb) = (kps.index_tip[frame_index], kps.thumb_tip[frame_index], kps.thumb_base[frame_index]);
    let (u, v) = ((it[0] + tt[0]) * 0.5, (it[1] + tt[1]) * 0.5);
    let (dx, dy) = (tt[0] - tb[0], tt[1] - tb[1]);
    let n = dx.hypot(dy);
    if n >= MIN_DIRECTION_PX {
        return Ok(Some(Pose2D::new(u, v, [dx / n, dy / n])));
    }
    Ok(Some(match prev {
        Some(p) if p.valid => Pose2D { u, v, d: p.d, valid: true },
        _ => Pose2D::position_only(u, v),
    }))
}

/// Surrogate poses for every frame, filling low-confidence frames by linear
/// interpolation of position and spherical interpolation of direction between
/// the nearest detected frames. Leading and trailing gaps hold the nearest value.
pub fn surrogate_track(kps: &HandKeypointTrack, min_confidence: f64) -> Result<Pose2DTrack> {
    kps.validate()?;
    let mut detected: Vec<Option<Pose2D>> = Vec::with_capacity(kps.len());
    let mut last: Option<Pose2D> = None;
    for t in 0..kps.len() {
        let p = surrogate_hand_pose(kps, t, last.as_ref(), min_confidence)?;
        if let Some(p) = p {
            if p.valid {
                last = Some(p);
            }
        }
        detected.push(p);
    }
    let anchors: Vec<usize> = (0..detected.len()).filter(|&t| detected[t].is_some()).collect();
    let (Some(&first), Some(&last_idx)) = (anchors.first(), anchors.last()) else {
        return Err(Error::EmptyPose);
    };
    let mut out = Vec::with_capacity(detected.len());
    let mut next_anchor = 0;
    for t in 0..detected.len() {
        if let Some(p) = detected[t] {
            out.push(p);
            continue;
        }
        if t < first {
            out.push(detected[first].unwrap());
            continue;
        }
        if t > last_idx {
            out.push(detected[last_idx].unwrap());
            continue;
        }
        while anchors[next_anchor] < t {
            next_anchor += 1;
        }
        let (i0, i1) = (anchors[next_anchor - 1], anchors[next_anchor]);
        let s = (t - i0) as f64 / (i1 - i0) as f64;
        out.push(interpolate_pose(&detected[i0].unwrap(), &detected[i1].unwrap(), s));
    }
    Ok(out)
}

fn interpolate_pose(a: &Pose2D, b: &Pose2D, s: f64) -> Pose2D {
    let u = a.u + (b.u - a.u) * s;
    let v = a.v + (b.v - a.v) * s;
    match (a.valid, b.valid) {
        (true, true) => Pose2D::new(u, v, slerp2(a.d, b.d, s)),
        (true, false) => Pose2D::new(u, v, a.d),
        (false, true) => Pose2D::new(u, v, b.d),
        (false, false) => Pose2D::position_only(u, v),
    }
}

/// Constant-angular-velocity interpolation between unit 2-vectors.
pub fn slerp2(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    let ta = a[1].atan2(a[0]);
    let mut delta = b[1].atan2(b[0]) - ta;
    while delta > std::f64::consts::PI {
        delta -= 2.0 * std::f64::consts::PI;
    }
    while delta <= -std::f64::consts::PI {
        delta += 2.0 * std::f64::consts::PI;
    }
    let th = ta + delta * s;
    [th.cos(), th.sin()]
}
