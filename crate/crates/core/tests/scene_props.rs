mod common;

use h2r_core::geometry::project_point;
use h2r_core::scene_sim::{make_scene, plan_trajectory, render_background, ActorKind, SceneConfig, TABLE_HALF_X, TABLE_HALF_Y, MAX_HEIGHT};

#[test]
fn render_is_deterministic() {
    let a = common::robot(4);
    let b = common::robot(4);
    assert_eq!(a.render, b.render);
    assert_eq!(a.background, b.background);
}

#[test]
fn mask_marks_exactly_the_changed_pixels() {
    for seed in 0..4 {
        for s in [common::robot(seed), common::human(seed)] {
            let (n, h, w) = s.render.video.shape();
            for t in 0..n {
                assert!(s.render.manipulator_mask.count(t) > 0, "frame {t} has no manipulator");
                for y in 0..h {
                    for x in 0..w {
                        let differs = s.render.video.pixel(t, y, x) != s.background.pixel(t, y, x);
                        assert_eq!(s.render.manipulator_mask.get(t, y, x), differs, "seed {seed} t {t} ({x},{y})");
                    }
                }
            }
        }
    }
}

#[test]
fn closed_phase_stays_in_bounds() {
    for seed in 0..100 {
        let scene = make_scene(seed, &SceneConfig::default()).unwrap();
        let traj = plan_trajectory(&scene, seed).unwrap();
        let transitions = traj.grasp_state.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(transitions, 2, "seed {seed}");
        for (p, &closed) in traj.positions.iter().zip(&traj.grasp_state) {
            if closed {
                assert!(p.x.abs() <= TABLE_HALF_X && p.y.abs() <= TABLE_HALF_Y, "seed {seed}: {p:?}");
                assert!(p.z >= 0.0 && p.z <= MAX_HEIGHT, "seed {seed}: {p:?}");
            }
        }
        assert_eq!(traj.positions[0], scene.home());
    }
}

#[test]
fn human_keypoints_land_in_blob() {
    for seed in 0..4 {
        let s = common::human(seed);
        let kps = s.render.keypoints.as_ref().unwrap();
        let boxes = s.render.metadata.hand_boxes.as_ref().unwrap();
        for t in 0..kps.len() {
            for p in [kps.thumb_base[t], kps.thumb_tip[t], kps.index_tip[t]] {
                let (x, y) = (p[0].floor() as usize, p[1].floor() as usize);
                assert!(s.render.manipulator_mask.get(t, y, x), "seed {seed} t {t} {p:?}");
                assert!(boxes[t].unwrap().contains(p));
            }
        }
    }
}

#[test]
fn no_grasp_background_is_static() {
    let s = common::robot(2);
    let mut traj = s.traj.clone();
    traj.grasp_state.iter_mut().for_each(|g| *g = false);
    let bg = render_background(&s.scene, &traj, &s.camera, 9).unwrap();
    for t in 1..bg.frames() {
        assert_eq!(bg.frame_slice(t), bg.frame_slice(0));
    }
}

fn color_centroid(v: &h2r_core::VideoArray, t: usize, c: [f64; 3]) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..v.height() {
        for x in 0..v.width() {
            if v.pixel(t, y, x) == c {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| [sx / n, sy / n])
}

#[test]
fn carried_object_follows_end_effector() {
    let mut checked = 0;
    for seed in 0..6 {
        let s = common::sim(seed, 128, 33, ActorKind::Robot);
        let idx = &s.render.metadata.trajectory_indices;
        let closed: Vec<usize> = (0..idx.len()).filter(|&t| s.traj.grasp_state[idx[t]]).collect();
        // The grasped object is the one whose footprint moves.
        let first = closed[0];
        let last = *closed.last().unwrap();
        let Some(obj) = s.scene.objects.iter().find(|o| {
            color_centroid(&s.background, first, o.color) != color_centroid(&s.background, last, o.color)
        }) else {
            continue;
        };
        let eef = |t: usize| project_point(&s.camera, &s.traj.positions[idx[t]]).unwrap();
        let c0 = color_centroid(&s.background, first, obj.color).unwrap();
        let e0 = eef(first);
        for &t in &closed {
            let Some(c) = color_centroid(&s.background, t, obj.color) else { continue };
            let e = eef(t);
            let (dx, dy) = (c[0] - c0[0] - (e.0 - e0.0), c[1] - c0[1] - (e.1 - e0.1));
            assert!(dx.hypot(dy) <= 1.0, "seed {seed} t {t}: off by ({dx}, {dy})");
            checked += 1;
        }
    }
    assert!(checked > 10);
}
