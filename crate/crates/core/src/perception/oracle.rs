//! Ground truth straight from the simulator.

use crate::clip::{Clip, SimTruth};
use crate::error::{Error, Result};
use crate::h2rep::HandKeypointTrack;
use crate::mask::MaskSequence;
use crate::video::VideoArray;

use super::{HandEstimate, InpaintReport};

fn truth(clip: &Clip) -> Result<&SimTruth> {
    clip.truth
        .as_ref()
        .ok_or_else(|| Error::Unsupported(format!("oracle backend needs a simulated clip, '{}' has no ground truth", clip.id)))
}

/// The prompt only names the entity; a clip has exactly one manipulator.
pub(super) fn segment(clip: &Clip, _prompt: &str) -> Result<MaskSequence> {
    Ok(truth(clip)?.manipulator_mask.clone())
}

pub(super) fn inpaint(clip: &Clip, dilated: &MaskSequence) -> Result<(VideoArray, InpaintReport)> {
    let t = truth(clip)?;
    let report = InpaintReport { masked_pixels: dilated.total(), ..Default::default() };
    Ok((t.background.clone(), report))
}

pub(super) fn hand_keypoints(clip: &Clip) -> Result<HandEstimate> {
    let t = truth(clip)?;
    Ok(match (&t.keypoints, &t.hand_boxes) {
        (Some(k), Some(b)) => HandEstimate { keypoints: k.clone(), boxes: b.clone() },
        (Some(k), None) => HandEstimate { keypoints: k.clone(), boxes: vec![None; k.len()] },
        _ => HandEstimate { keypoints: HandKeypointTrack::undetected(clip.frames()), boxes: vec![None; clip.frames()] },
    })
}
