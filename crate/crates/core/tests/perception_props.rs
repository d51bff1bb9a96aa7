mod common;

use h2r_core::clip::{Clip, SimTruth};
use h2r_core::eval::masked_psnr;
use h2r_core::perception::{inpaint_temporal_median, BackendSelection, Perception, PerceptionBackendConfig};
use h2r_core::{Error, MaskSequence, VideoArray};
use proptest::prelude::*;

#[test]
fn oracle_returns_ground_truth() {
    let s = common::robot(1);
    let p = Perception::oracle();
    assert_eq!(p.segment(&s.clip, "robotic arm").unwrap(), s.render.manipulator_mask);
    assert_eq!(p.inpaint(&s.clip, &s.render.manipulator_mask).unwrap().video, s.background);

    let h = common::human(1);
    assert_eq!(p.segment(&h.clip, "person").unwrap(), h.render.manipulator_mask);
    let est = p.estimate_hand_keypoints(&h.clip).unwrap();
    assert_eq!(&est.keypoints, h.render.keypoints.as_ref().unwrap());
    assert!(est.keypoints.confidence.iter().all(|&c| c == 1.0));
    for t in 0..est.keypoints.len() {
        let b = est.boxes[t].unwrap();
        for k in [est.keypoints.thumb_base[t], est.keypoints.thumb_tip[t], est.keypoints.index_tip[t]] {
            assert!(b.contains(k), "frame {t}: {k:?} outside {b:?}");
        }
    }
}

#[test]
fn oracle_without_actor_detects_nothing() {
    let h = common::human(2);
    let empty = MaskSequence::empty(h.background.frames(), 64, 64);
    let clip = Clip {
        id: "bg".into(),
        video: h.background.clone(),
        fps: h.clip.fps,
        truth: Some(SimTruth { manipulator_mask: empty, background: h.background.clone(), keypoints: None, hand_boxes: None }),
    };
    let est = Perception::oracle().estimate_hand_keypoints(&clip).unwrap();
    assert!(est.keypoints.confidence.iter().all(|&c| c == 0.0));
}

#[test]
fn oracle_needs_simulated_input() {
    let clip = Clip { id: "real".into(), video: VideoArray::zeros(1, 4, 4), fps: 10.0, truth: None };
    let err = Perception::oracle().segment(&clip, "person").unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn naive_cannot_segment() {
    let sel = BackendSelection { segment: PerceptionBackendConfig::naive(), ..Default::default() };
    assert!(sel.validate().is_err());
}

/// Masked-pixel PSNR of the naive inpainter against the true background.
fn naive_psnr(seed: u64) -> f64 {
    let s = common::robot(seed);
    let sel = BackendSelection { inpaint: PerceptionBackendConfig::naive(), ..Default::default() };
    let p = Perception::new(&sel).unwrap();
    let out = p.inpaint(&s.clip, &s.render.manipulator_mask).unwrap();
    masked_psnr(&out.video, &s.background, &s.render.manipulator_mask.dilate(2)).unwrap()
}

#[test]
fn naive_inpainter_recovers_static_background() {
    let psnr: Vec<f64> = (0..4).map(naive_psnr).collect();
    assert!(psnr.iter().all(|&p| p > 15.0), "{psnr:?}");
}

fn arb_video_and_mask() -> impl Strategy<Value = (VideoArray, MaskSequence)> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, h, w)| {
        (
            proptest::collection::vec(0u8..=255, n * h * w * 3),
            proptest::collection::vec(proptest::bool::weighted(0.3), n * h * w),
        )
            .prop_map(move |(px, m)| {
                let v = VideoArray::from_data(n, h, w, px.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
                (v, MaskSequence::from_data(n, h, w, m).unwrap())
            })
    })
}

proptest! {
    #[test]
    fn naive_leaves_unmasked_pixels(( v, m) in arb_video_and_mask()) {
        let (out, report) = inpaint_temporal_median(&v, &m);
        for (i, &b) in m.data().iter().enumerate() {
            if !b {
                prop_assert_eq!(&out.data()[i * 3..i * 3 + 3], &v.data()[i * 3..i * 3 + 3]);
            }
        }
        prop_assert_eq!(report.masked_pixels, m.total());
        prop_assert_eq!(report.temporal_fills + report.spatial_fills + report.mean_fills, m.total());
    }

    #[test]
    fn naive_is_idempotent((v, m) in arb_video_and_mask()) {
        let (once, _) = inpaint_temporal_median(&v, &m);
        let (twice, _) = inpaint_temporal_median(&once, &m);
        prop_assert_eq!(once, twice);
    }
}
