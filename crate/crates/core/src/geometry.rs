//! Pinhole projection of end-effector poses onto the image plane.
//!
//! Conventions: world frame is right-handed with `z` up; the camera frame
//! follows the usual computer-vision layout (`x` right, `y` down, `z` along
//! the optical axis). Pixel `(x, y)` covers `[x, x+1) × [y, y+1)`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth below which a point counts as behind the image plane.
pub const MIN_DEPTH: f64 = 1e-6;
/// Offset along the forward axis used to project orientation.
pub const FORWARD_EPS: f64 = 0.01;
/// Pixel-space length under which the projected direction is degenerate.
pub const MIN_DIRECTION_PX: f64 = 1e-6;

const SO3_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    /// Intrinsics `K` (zero skew).
    pub k: Matrix3<f64>,
    /// World-to-camera rotation `R_c`.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation `t_c` in meters.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraParams {
    pub fn new(
        k: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self { k, rotation, translation, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    /// Camera at `eye` looking at `target`, with `up` resolving roll.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        k: Matrix3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("look_at with eye == target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("look_at up vector parallel to view".into()))?;
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(k, rotation, translation, width, height)
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        if !(self.fx() > 0.0 && self.fy() > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got fx={} fy={}", self.fx(), self.fy())));
        }
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Config("intrinsics must be upper-triangular with zero skew and K[2][2] = 1".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx()) || !(0.0..self.height as f64).contains(&self.cy()) {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx(),
                self.cy(),
                self.width,
                self.height
            )));
        }
        if !is_rotation(&self.rotation, SO3_TOL) {
            return Err(Error::Config("camera rotation is not in SO(3)".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("camera translation must be finite".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space ray direction (unnormalized) through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let xc = Vector3::new((u - self.cx()) / self.fx(), (v - self.cy()) / self.fy(), 1.0);
        self.rotation.transpose() * xc
    }

    /// World point seen at `(u, v)` with camera-frame depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let xc = Vector3::new((u - self.cx()) / self.fx() * depth, (v - self.cy()) / self.fy() * depth, depth);
        self.rotation.transpose() * (xc - self.translation)
    }

    /// Same extrinsics, intrinsics rescaled for a `width × height` image.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let k = Self::intrinsics(self.fx() * sx, self.fy() * sy, self.cx() * sx, self.cy() * sy);
        Self::new(k, self.rotation, self.translation, width, height)
    }
}

/// A 6-DoF end-effector pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose6D {
    /// Gripper forward (approach) axis: the local `+x` column of the rotation.
    pub fn forward_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }
}

/// Image-plane pose indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub u: f64,
    pub v: f64,
    /// Unit direction in pixel space; meaningful only when `valid`.
    pub d: [f64; 2],
    pub valid: bool,
}

impl Pose2D {
    pub fn new(u: f64, v: f64, d: [f64; 2]) -> Self {
        Self { u, v, d, valid: true }
    }

    pub fn position_only(u: f64, v: f64) -> Self {
        Self { u, v, d: [0.0, 0.0], valid: false }
    }
}

pub type Pose2DTrack = Vec<Pose2D>;

/// Project a world point. Returns `(u, v, depth)`.
pub fn project_point(camera: &CameraParams, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let xc = camera.rotation * p + camera.translation;
    let depth = xc.z;
    if depth <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth });
    }
    let u = camera.fx() * (xc.x / depth) + camera.cx();
    let v = camera.fy() * (xc.y / depth) + camera.cy();
    Ok((u, v, depth))
}

pub fn project_pose(camera: &CameraParams, pose: &Pose6D, prev: Option<&Pose2D>) -> Result<Pose2D> {
    project_pose_with_eps(camera, pose, prev, FORWARD_EPS)
}

/// [`project_pose`] with an explicit forward offset `eps` (meters).
pub fn project_pose_with_eps(
    camera: &CameraParams,
    pose: &Pose6D,
    prev: Option<&Pose2D>,
    eps: f64,
) -> Result<Pose2D> {
    let (u, v, _) = project_point(camera, &pose.position)?;
    let tip = pose.position + pose.forward_axis() * eps;
    let (u2, v2, _) = project_point(camera, &tip)?;
    let (du, dv) = (u2 - u, v2 - v);
    let norm = du.hypot(dv);
    if norm >= MIN_DIRECTION_PX {
        return Ok(Pose2D::new(u, v, [du / norm, dv / norm]));
    }
    Ok(match prev {
        Some(p) => Pose2D { u, v, d: p.d, valid: p.valid },
        None => Pose2D::position_only(u, v),
    })
}

pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// Rotation about a world axis through the origin.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera() -> CameraParams {
        CameraParams::new(
            CameraParams::intrinsics(100.0, 100.0, 32.0, 32.0),
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            64,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let (u, v, z) = project_point(&axis_camera(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, z), (32.0, 32.0, 1.0));
    }

    #[test]
    fn off_axis_point() {
        let (u, v, z) = project_point(&axis_camera(), &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((u - 42.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9 && z == 1.0);
    }

    #[test]
    fn behind_camera_rejected() {
        let err = project_point(&axis_camera(), &Vector3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
        let err = project_point(&axis_camera(), &Vector3::new(0.0, 0.0, 1e-7)).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
    }

    #[test]
    fn forward_x_axis_projects_to_plus_u() {
        let pose = Pose6D { position: Vector3::new(0.0, 0.0, 1.0), rotation: Matrix3::identity() };
        let p = project_pose(&axis_camera(), &pose, None).unwrap();
        assert!(p.valid);
        assert!((p.d[0] - 1.0).abs() < 1e-12 && p.d[1].abs() < 1e-12);
    }

    #[test]
    fn forward_along_view_ray_is_degenerate() {
        // local +x mapped onto the optical axis
        let rot = axis_angle(Vector3::y(), -std::f64::consts::FRAC_PI_2);
        assert!((rot.column(0) - Vector3::z()).norm() < 1e-12);
        let pose = Pose6D { position: Vector3::new(0.0, 0.0, 1.0), rotation: rot };
        let p = project_pose(&axis_camera(), &pose, None).unwrap();
        assert!(!p.valid);
        assert_eq!((p.u, p.v), (32.0, 32.0));

        let prev = Pose2D::new(0.0, 0.0, [0.0, 1.0]);
        let held = project_pose(&axis_camera(), &pose, Some(&prev)).unwrap();
        assert!(held.valid);
        assert_eq!(held.d, [0.0, 1.0]);
    }

    #[test]
    fn invalid_cameras_rejected() {
        let bad_f = CameraParams::new(
            CameraParams::intrinsics(-1.0, 100.0, 32.0, 32.0),
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            64,
        );
        assert!(matches!(bad_f, Err(Error::Config(_))));
        let bad_c = CameraParams::new(
            CameraParams::intrinsics(100.0, 100.0, 64.0, 32.0),
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            64,
        );
        assert!(bad_c.is_err());
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.0 + 1e-6;
        let bad_r = CameraParams::new(CameraParams::intrinsics(1.0, 1.0, 0.0, 0.0), r, Vector3::zeros(), 2, 2);
        assert!(bad_r.is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let cam = CameraParams::look_at(
            Vector3::new(0.0, -1.0, 1.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::z(),
            CameraParams::intrinsics(50.0, 50.0, 32.0, 32.0),
            64,
            64,
        )
        .unwrap();
        let (u, v, _) = project_point(&cam, &Vector3::zeros()).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9);
        // world +z points up in the image (toward smaller v)
        let (_, v_up, _) = project_point(&cam, &Vector3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < v);
        assert!((cam.center() - Vector3::new(0.0, -1.0, 1.0)).norm() < 1e-12);
    }
}
