use crate::h2rep::HandKeypointTrack;
use crate::mask::MaskSequence;
use crate::scene_sim::{BBox, RenderOutput};
use crate::video::VideoArray;

/// Simulator ground truth travelling alongside a rendered clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub manipulator_mask: MaskSequence,
    pub background: VideoArray,
    pub keypoints: Option<HandKeypointTrack>,
    pub hand_boxes: Option<Vec<Option<BBox>>>,
}

/// A video plus whatever is known about where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub video: VideoArray,
    pub fps: f64,
    pub truth: Option<SimTruth>,
}

impl Clip {
    pub fn from_render(id: impl Into<String>, render: &RenderOutput, background: VideoArray) -> Self {
        Self {
            id: id.into(),
            video: render.video.clone(),
            fps: render.metadata.fps,
            truth: Some(SimTruth {
                manipulator_mask: render.manipulator_mask.clone(),
                background,
                keypoints: render.keypoints.clone(),
                hand_boxes: render.metadata.hand_boxes.clone(),
            }),
        }
    }

    pub fn frames(&self) -> usize {
        self.video.frames()
    }

    /// Keep the listed frames (in order) in the video and all truth streams.
    pub fn select_frames(&self, indices: &[usize], fps: f64) -> Clip {
        Clip {
            id: self.id.clone(),
            video: self.video.select_frames(indices),
            fps,
            truth: self.truth.as_ref().map(|t| SimTruth {
                manipulator_mask: t.manipulator_mask.select_frames(indices),
                background: t.background.select_frames(indices),
                keypoints: t.keypoints.as_ref().map(|k| k.select_frames(indices)),
                hand_boxes: t.hand_boxes.as_ref().map(|b| indices.iter().map(|&i| b[i]).collect()),
            }),
        }
    }

    pub fn window(&self, start: usize, len: usize) -> Clip {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_frames(&idx, self.fps)
    }

    /// Spatial resize of video and truth; masks use nearest neighbor.
    pub fn resized(&self, height: usize, width: usize) -> Clip {
        let (sy, sx) = (height as f64 / self.video.height() as f64, width as f64 / self.video.width() as f64);
        Clip {
            id: self.id.clone(),
            video: self.video.resize_bilinear(height, width),
            fps: self.fps,
            truth: self.truth.as_ref().map(|t| SimTruth {
                manipulator_mask: t.manipulator_mask.resize_nearest(height, width),
                background: t.background.resize_bilinear(height, width),
                keypoints: t.keypoints.as_ref().map(|k| k.scaled(sx, sy)),
                hand_boxes: t.hand_boxes.as_ref().map(|b| {
                    b.iter()
                        .map(|o| o.map(|b| BBox { x0: b.x0 * sx, y0: b.y0 * sy, x1: b.x1 * sx, y1: b.y1 * sy }))
                        .collect()
                }),
            }),
        }
    }
}
