use std::f64::consts::PI;

use h2r_core::geometry::{axis_angle, project_point, project_pose, project_pose_with_eps};
use h2r_core::{CameraParams, Pose6D};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn camera(fx: f64, fy: f64, cx: f64, cy: f64) -> CameraParams {
    CameraParams::new(CameraParams::intrinsics(fx, fy, cx, cy), Matrix3::identity(), Vector3::zeros(), 64, 64).unwrap()
}

fn tilted_camera() -> CameraParams {
    let r = axis_angle(Vector3::new(1.0, 0.3, -0.2).normalize(), 0.4);
    CameraParams::new(CameraParams::intrinsics(90.0, 110.0, 30.5, 33.25), r, Vector3::new(0.1, -0.2, 1.5), 64, 64).unwrap()
}

#[test]
fn hand_computed_projections() {
    let cam = tilted_camera();
    for p in [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.2, -0.1, 0.3), Vector3::new(-0.3, 0.25, -0.1)] {
        // Written out component by component.
        let r = cam.rotation;
        let xc = r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + cam.translation.x;
        let yc = r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + cam.translation.y;
        let zc = r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + cam.translation.z;
        let (u, v, d) = project_point(&cam, &p).unwrap();
        assert!((u - (90.0 * xc / zc + 30.5)).abs() < 1e-9);
        assert!((v - (110.0 * yc / zc + 33.25)).abs() < 1e-9);
        assert!((d - zc).abs() < 1e-12);
    }
    let (u, v, d) = project_point(&camera(100.0, 100.0, 32.0, 32.0), &Vector3::new(0.1, 0.0, 1.0)).unwrap();
    assert!((u - 42.0).abs() < 1e-9 && v == 32.0 && d == 1.0);
}

#[test]
fn direction_follows_rotation_about_view_ray() {
    let cam = camera(100.0, 100.0, 32.0, 32.0);
    let p = Vector3::new(0.0, 0.0, 1.0);
    for k in 0..36 {
        let theta = k as f64 * 2.0 * PI / 36.0;
        let base = Pose6D { position: p, rotation: axis_angle(Vector3::z(), theta) };
        let turned = Pose6D { position: p, rotation: axis_angle(Vector3::z(), theta + PI / 2.0) };
        let d0 = project_pose(&cam, &base, None).unwrap().d;
        let d1 = project_pose(&cam, &turned, None).unwrap().d;
        assert!((d0[0] - theta.cos()).abs() < 1e-6 && (d0[1] - theta.sin()).abs() < 1e-6);
        // Rotating d0 by 90 degrees in the image.
        assert!((d1[0] + d0[1]).abs() < 1e-6 && (d1[1] - d0[0]).abs() < 1e-6, "k={k}");
    }
}

#[test]
fn power_of_two_focal_scaling_is_exact() {
    let p = Vector3::new(0.137, -0.291, 0.77);
    let (u, v, _) = project_point(&camera(97.3, 101.9, 0.0, 0.0), &p).unwrap();
    for s in [0.5, 2.0, 4.0] {
        let (us, vs, _) = project_point(&camera(97.3 * s, 101.9 * s, 0.0, 0.0), &p).unwrap();
        assert_eq!(us, u * s);
        assert_eq!(vs, v * s);
    }
}

proptest! {
    #[test]
    fn focal_scaling(x in -0.5..0.5f64, y in -0.5..0.5f64, z in 0.5..3.0f64, s in 0.25..4.0f64, yaw in -PI..PI) {
        let cam = camera(80.0, 95.0, 31.5, 30.0);
        let scaled = camera(80.0 * s, 95.0 * s, 31.5, 30.0);
        let p = Vector3::new(x, y, z);
        let (u, v, _) = project_point(&cam, &p).unwrap();
        let (us, vs, _) = project_point(&scaled, &p).unwrap();
        prop_assert!(((us - 31.5) - s * (u - 31.5)).abs() < 1e-12 * (1.0 + us.abs()));
        prop_assert!(((vs - 30.0) - s * (v - 30.0)).abs() < 1e-12 * (1.0 + vs.abs()));
        let pose = Pose6D { position: p, rotation: axis_angle(Vector3::new(0.2, 1.0, 0.4).normalize(), yaw) };
        let d = project_pose(&cam, &pose, None).unwrap();
        let ds = project_pose(&scaled, &pose, None).unwrap();
        prop_assume!(d.valid);
        prop_assert!((d.d[0] - ds.d[0]).abs() < 1e-9 && (d.d[1] - ds.d[1]).abs() < 1e-9);
    }

    #[test]
    fn direction_insensitive_to_eps(x in -0.3..0.3f64, y in -0.3..0.3f64, z in 0.5..2.0f64,
                                     ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.1..3.0f64,
                                     eps in 1e-4..1e-1f64) {
        let cam = tilted_camera();
        let axis = Vector3::new(ax, ay, 0.5).normalize();
        let world = cam.rotation.transpose() * (Vector3::new(x, y, z) - cam.translation);
        let pose = Pose6D { position: world, rotation: axis_angle(axis, angle) };
        let reference = project_pose_with_eps(&cam, &pose, None, 1e-4).unwrap();
        let d = project_pose_with_eps(&cam, &pose, None, eps).unwrap();
        prop_assume!(reference.valid);
        // Skip poses whose forward axis is close to the viewing ray.
        let fwd = cam.rotation * pose.forward_axis();
        prop_assume!(fwd.x.hypot(fwd.y) > 0.3);
        prop_assert!((d.d[0] - reference.d[0]).abs() < 1e-6 && (d.d[1] - reference.d[1]).abs() < 1e-6, "{:?} vs {:?}", d.d, reference.d);
    }

    #[test]
    fn unproject_round_trip(u in -50.0..120.0f64, v in -50.0..120.0f64, z in 0.01..50.0f64) {
        let cam = tilted_camera();
        let p = cam.unproject(u, v, z);
        let (u2, v2, d) = project_point(&cam, &p).unwrap();
        prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
        prop_assert!((d - z).abs() < 1e-9 * z.max(1.0));
    }
}
