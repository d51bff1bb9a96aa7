//! Deterministic tabletop manipulation scenes with exact ground truth.
//!
//! A scene is a flat table with a few flat objects. A pick-and-place planner
//! produces an end-effector trajectory; the software rasterizer renders the
//! scene with and without the manipulator, yielding pixel-exact masks.

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, project_point, project_pose, CameraParams, Pose2D, Pose2DTrack, Pose6D};
use crate::h2rep::{HandKeypointTrack, REFERENCE_SIZE};
use crate::mask::MaskSequence;
use crate::raster;
use crate::video::{rgb8, quantize_u8, Frame, VideoArray};

pub const TABLE_HALF_X: f64 = 0.45;
pub const TABLE_HALF_Y: f64 = 0.35;
pub const MAX_HEIGHT: f64 = 0.5;
/// Offset from the arm base to the planner's home pose.
pub const HOME_OFFSET: [f64; 3] = [0.0, -0.15, 0.25];
const SHOULDER_HEIGHT: f64 = 0.3;
const GRASP_CLEARANCE: f64 = 0.03;
const CARRY_HEIGHT: f64 = 0.15;
const TOOL_PITCH: f64 = 0.9;

pub const ARM_COLOR: [f64; 3] = rgb8(70, 70, 78);
pub const GRIPPER_COLOR: [f64; 3] = rgb8(35, 35, 40);
/// Reserved gripper-tip color, never used by scene content.
pub const TIP_COLOR: [f64; 3] = rgb8(0, 255, 0);
pub const SKIN_COLOR: [f64; 3] = rgb8(225, 172, 128);
pub const FLOOR_COLOR: [f64; 3] = rgb8(118, 118, 126);
pub const WALL_COLOR: [f64; 3] = rgb8(150, 170, 190);
pub const DEFAULT_TABLE_COLOR: [f64; 3] = rgb8(196, 164, 124);

const OBJECT_PALETTE: [[f64; 3]; 8] = [
    rgb8(230, 140, 30),
    rgb8(235, 210, 40),
    rgb8(140, 60, 170),
    rgb8(40, 160, 170),
    rgb8(230, 120, 170),
    rgb8(120, 80, 40),
    rgb8(150, 150, 40),
    rgb8(245, 245, 245),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Robot,
    HumanProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Box,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ObjectShape,
    /// Edge length (box) or diameter (disk) in meters.
    pub size: f64,
    pub color: [f64; 3],
    pub initial_position: Vector3<f64>,
}

impl SceneObject {
    fn contains(&self, center: &Vector3<f64>, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - center.x, y - center.y);
        let h = self.size * 0.5;
        match self.shape {
            ObjectShape::Box => dx.abs() <= h && dy.abs() <= h,
            ObjectShape::Disk => dx * dx + dy * dy <= h * h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub table_color: [f64; 3],
    pub objects: Vec<SceneObject>,
    pub arm_base: Vector3<f64>,
    pub actor_kind: ActorKind,
}

fn reserved_colors() -> [[f64; 3]; 7] {
    [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], ARM_COLOR, GRIPPER_COLOR, TIP_COLOR, SKIN_COLOR, FLOOR_COLOR]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > 4 {
            return Err(Error::Config(format!("scene needs 1..=4 objects, has {}", self.objects.len())));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.initial_position.z != 0.0 {
                return Err(Error::Config(format!("object {i} is not on the table plane")));
            }
            if !(o.size > 0.0) {
                return Err(Error::Config(format!("object {i} has degenerate size {}", o.size)));
            }
            if reserved_colors().contains(&o.color) || o.color == self.table_color {
                return Err(Error::Config(format!("object {i} uses a reserved color")));
            }
        }
        if reserved_colors().contains(&self.table_color) {
            return Err(Error::Config("table uses a reserved color".into()));
        }
        Ok(())
    }

    /// Home pose position of the planner.
    pub fn home(&self) -> Vector3<f64> {
        self.arm_base + Vector3::from(HOME_OFFSET)
    }

    fn table_alt_color(&self) -> [f64; 3] {
        self.table_color.map(|c| quantize_u8(c * 0.92))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_objects: usize,
    pub object_size: [f64; 2],
    pub actor_kind: ActorKind,
    pub arm_base: [f64; 3],
    pub table_color: Option<[f64; 3]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_objects: 2,
            object_size: [0.1, 0.15],
            actor_kind: ActorKind::Robot,
            arm_base: [0.0, 0.42, 0.0],
            table_color: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.n_objects) {
            return Err(Error::Config(format!("n_objects must be in 1..=4, got {}", self.n_objects)));
        }
        let [lo, hi] = self.object_size;
        if !(lo > 0.0 && hi >= lo && hi < 0.25) {
            return Err(Error::Config(format!("degenerate object_size range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

pub fn make_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut palette = OBJECT_PALETTE.to_vec();
    let table_color = config.table_color.unwrap_or(DEFAULT_TABLE_COLOR);
    palette.retain(|c| *c != table_color);
    palette.shuffle(&mut rng);
    if palette.len() < config.n_objects {
        return Err(Error::Config("not enough distinct object colors".into()));
    }

    let mut objects: Vec<SceneObject> = Vec::with_capacity(config.n_objects);
    for i in 0..config.n_objects {
        let shape = if rng.random_bool(0.5) { ObjectShape::Box } else { ObjectShape::Disk };
        let size = rng.random_range(config.object_size[0]..=config.object_size[1]);
        let mut placed = None;
        for _ in 0..1000 {
            let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.22..0.18), 0.0);
            let clear = objects.iter().all(|o| {
                (o.initial_position - p).norm() > (o.size + size) * 0.6 + 0.04
            });
            if clear {
                placed = Some(p);
                break;
            }
        }
        let Some(initial_position) = placed else {
            return Err(Error::Config("could not place objects without overlap".into()));
        };
        objects.push(SceneObject { shape, size, color: palette[i], initial_position });
    }

    let scene = SceneSpec {
        seed,
        table_color,
        objects,
        arm_base: Vector3::from(config.arm_base),
        actor_kind: config.actor_kind,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose6DoFTrajectory {
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub orientations: Vec<Matrix3<f64>>,
    pub grasp_state: Vec<bool>,
}

impl Pose6DoFTrajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn pose(&self, i: usize) -> Pose6D {
        Pose6D { position: self.positions[i], rotation: self.orientations[i] }
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n == 0 {
            return Err(Error::Contract("empty trajectory".into()));
        }
        if self.positions.len() != n || self.orientations.len() != n || self.grasp_state.len() != n {
            return Err(Error::Contract("trajectory lists differ in length".into()));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("timestamps must be strictly increasing".into()));
        }
        if let Some(i) = self.orientations.iter().position(|r| !geometry::is_rotation(r, 1e-9)) {
            return Err(Error::Contract(format!("orientation {i} is not in SO(3)")));
        }
        Ok(())
    }

    /// Index of the sample whose timestamp is nearest to `time` (ties go earlier).
    pub fn nearest_index(&self, time: f64) -> usize {
        let i = self.timestamps.partition_point(|&t| t < time);
        if i == 0 {
            return 0;
        }
        if i >= self.len() {
            return self.len() - 1;
        }
        if time - self.timestamps[i - 1] <= self.timestamps[i] - time {
            i - 1
        } else {
            i
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { duration_s: 4.8, rate_hz: 50.0 }
    }
}

/// Gripper orientation: yaw about world `z`, forward axis pitched down.
pub fn tool_rotation(yaw: f64) -> Matrix3<f64> {
    geometry::axis_angle(Vector3::z(), yaw) * geometry::axis_angle(Vector3::y(), TOOL_PITCH)
}

pub fn plan_trajectory(scene: &SceneSpec, seed: u64) -> Result<Pose6DoFTrajectory> {
    plan_trajectory_with(scene, seed, &PlanConfig::default())
}

/// Pick-and-place: home, approach, grasp, carry, release, retreat.
pub fn plan_trajectory_with(scene: &SceneSpec, seed: u64, config: &PlanConfig) -> Result<Pose6DoFTrajectory> {
    if scene.objects.is_empty() {
        return Err(Error::Contract("cannot plan without objects".into()));
    }
    if !(config.duration_s > 0.0 && config.rate_hz > 0.0) {
        return Err(Error::Config("plan duration and rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ scene.seed.rotate_left(17));
    let target = rng.random_range(0..scene.objects.len());
    let pick = scene.objects[target].initial_position;
    let mut place = pick;
    for _ in 0..1000 {
        let cand = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.22..0.18), 0.0);
        let far_from_pick = (cand - pick).norm() > 0.15;
        let clear = scene
            .objects
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .all(|(_, o)| (o.initial_position - cand).norm() > (o.size + scene.objects[target].size) * 0.6 + 0.03);
        if far_from_pick && clear {
            place = cand;
            break;
        }
    }
    if place == pick {
        return Err(Error::Config("no free placement location".into()));
    }
    let home = scene.home();
    let yaw_home = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw_grasp = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw_end = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);

    let up = |p: Vector3<f64>, h: f64| Vector3::new(p.x, p.y, h);
    // (position, yaw, relative duration, grasp closed during the segment)
    let waypoints = [
        (home, yaw_home, 0.0, false),
        (up(pick, CARRY_HEIGHT), yaw_grasp, 1.2, false),
        (up(pick, GRASP_CLEARANCE), yaw_grasp, 0.6, false),
        (up(pick, GRASP_CLEARANCE), yaw_grasp, 0.3, true),
        (up(pick, CARRY_HEIGHT), yaw_grasp, 0.6, true),
        (up(place, CARRY_HEIGHT), yaw_grasp, 1.2, true),
        (up(place, GRASP_CLEARANCE), yaw_grasp, 0.6, true),
        (up(place, GRASP_CLEARANCE), yaw_grasp, 0.3, false),
        (up(place, CARRY_HEIGHT), yaw_end, 0.6, false),
    ];
    let total: f64 = waypoints.iter().map(|w| w.2).sum();
    let mut knots = vec![0.0];
    for w in &waypoints[1..] {
        knots.push(knots.last().unwrap() + w.2 / total * config.duration_s);
    }

    let n = (config.duration_s * config.rate_hz).round() as usize + 1;
    let mut traj = Pose6DoFTrajectory {
        timestamps: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
        orientations: Vec::with_capacity(n),
        grasp_state: Vec::with_capacity(n),
    };
    let mut seg = 1;
    for i in 0..n {
        let time = i as f64 / config.rate_hz;
        while seg + 1 < knots.len() && time > knots[seg] {
            seg += 1;
        }
        let (a, b) = (&waypoints[seg - 1], &waypoints[seg]);
        let s = ((time - knots[seg - 1]) / (knots[seg] - knots[seg - 1])).clamp(0.0, 1.0);
        let s = s * s * (3.0 - 2.0 * s);
        let pos = a.0 + (b.0 - a.0) * s;
        let yaw = a.1 + wrap_angle(b.1 - a.1) * s;
        traj.timestamps.push(time);
        traj.positions.push(pos);
        traj.orientations.push(tool_rotation(yaw));
        // Closed from arrival at the grasp pose until arrival at the release pose.
        traj.grasp_state.push(b.3 && !(seg == 3 && s == 0.0));
    }
    Ok(traj)
}

fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// The default static camera: oblique view over the table from the front.
pub fn default_camera(width: usize, height: usize) -> Result<CameraParams> {
    let f = 1.3 * width.min(height) as f64;
    CameraParams::look_at(
        Vector3::new(0.0, -0.75, 1.0),
        Vector3::new(0.0, 0.04, 0.0),
        Vector3::z(),
        CameraParams::intrinsics(f, f, width as f64 / 2.0, height as f64 / 2.0),
        width,
        height,
    )
}

/// Axis-aligned box in pixel-edge coordinates, `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] < self.x1 && p[1] >= self.y0 && p[1] < self.y1
    }

    /// Tight box around the set pixels of one mask frame.
    pub fn of_mask(mask: &MaskSequence, t: usize) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(t, y, x) {
                    let (xf, yf) = (x as f64, y as f64);
                    b = Some(match b {
                        None => BBox { x0: xf, y0: yf, x1: xf + 1.0, y1: yf + 1.0 },
                        Some(b) => BBox { x0: b.x0.min(xf), y0: b.y0.min(yf), x1: b.x1.max(xf + 1.0), y1: b.y1.max(yf + 1.0) },
                    });
                }
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMetadata {
    pub fps: f64,
    pub frame_times: Vec<f64>,
    /// Trajectory sample used for each frame.
    pub trajectory_indices: Vec<usize>,
    /// Projected end-effector pose per frame.
    pub poses: Pose2DTrack,
    pub hand_boxes: Option<Vec<Option<BBox>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub video: VideoArray,
    pub manipulator_mask: MaskSequence,
    pub keypoints: Option<HandKeypointTrack>,
    pub metadata: RenderMetadata,
}

/// Object positions at every trajectory sample, with rigid attachment while grasped.
pub fn object_positions(scene: &SceneSpec, traj: &Pose6DoFTrajectory) -> Vec<Vec<Vector3<f64>>> {
    let mut current: Vec<Vector3<f64>> = scene.objects.iter().map(|o| o.initial_position).collect();
    let mut attached: Option<(usize, Vector3<f64>)> = None;
    let mut out = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let p = traj.positions[i];
        let closed = traj.grasp_state[i];
        let was_closed = i > 0 && traj.grasp_state[i - 1];
        if closed && !was_closed {
            attached = scene
                .objects
                .iter()
                .enumerate()
                .filter(|(j, o)| o.contains(&current[*j], p.x, p.y) && current[*j].z <= p.z)
                .min_by(|a, b| {
                    let da = (current[a.0] - p).xy().norm();
                    let db = (current[b.0] - p).xy().norm();
                    da.total_cmp(&db)
                })
                .map(|(j, _)| (j, current[j] - p));
        } else if !closed && was_closed {
            if let Some((j, _)) = attached.take() {
                current[j].z = current[j].z.max(0.0);
            }
        }
        if let Some((j, offset)) = attached {
            current[j] = p + offset;
            current[j].z = current[j].z.max(0.0);
        }
        out.push(current.clone());
    }
    out
}

struct FrameTiming {
    times: Vec<f64>,
    indices: Vec<usize>,
    fps: f64,
}

fn frame_timing(traj: &Pose6DoFTrajectory, n_frames: usize) -> Result<FrameTiming> {
    if n_frames == 0 {
        return Err(Error::Contract("n_frames must be >= 1".into()));
    }
    traj.validate()?;
    let t0 = traj.timestamps[0];
    let dur = traj.duration();
    let times: Vec<f64> = (0..n_frames)
        .map(|k| if n_frames == 1 { t0 } else { t0 + dur * k as f64 / (n_frames - 1) as f64 })
        .collect();
    let indices = times.iter().map(|&t| traj.nearest_index(t)).collect();
    let fps = if n_frames > 1 && dur > 0.0 { (n_frames - 1) as f64 / dur } else { 0.0 };
    Ok(FrameTiming { times, indices, fps })
}

fn check_in_front(scene: &SceneSpec, camera: &CameraParams) -> Result<()> {
    camera.validate()?;
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        project_point(camera, &Vector3::new(sx * TABLE_HALF_X, sy * TABLE_HALF_Y, 0.0))
            .map_err(|e| Error::Geometry(format!("table corner not in front of camera: {e}")))?;
    }
    project_point(camera, &scene.arm_base).map_err(|e| Error::Geometry(format!("arm base: {e}")))?;
    Ok(())
}

/// Scene without manipulator; table, floor, wall and flat objects via ray casting.
fn render_scene_layer(scene: &SceneSpec, camera: &CameraParams, objects: &[Vector3<f64>]) -> Frame {
    let (w, h) = (camera.width, camera.height);
    let center = camera.center();
    let alt = scene.table_alt_color();
    let mut frame = Frame::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let dir = camera.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            let mut color = WALL_COLOR;
            let mut best = f64::INFINITY;
            if dir.z < 0.0 {
                let s = -center.z / dir.z;
                let hit = center + dir * s;
                best = s;
                color = if hit.x.abs() <= TABLE_HALF_X && hit.y.abs() <= TABLE_HALF_Y {
                    let cell = ((hit.x + 10.0) / 0.1).floor() as i64 + ((hit.y + 10.0) / 0.1).floor() as i64;
                    if cell.rem_euclid(2) == 0 { scene.table_color } else { alt }
                } else {
                    FLOOR_COLOR
                };
            }
            for (o, pos) in scene.objects.iter().zip(objects) {
                if dir.z == 0.0 {
                    continue;
                }
                let s = (pos.z - center.z) / dir.z;
                if s <= 0.0 || s > best + 1e-12 {
                    continue;
                }
                let hit = center + dir * s;
                if o.contains(pos, hit.x, hit.y) {
                    best = s;
                    color = o.color;
                }
            }
            frame.set_pixel(y, x, color);
        }
    }
    frame
}

struct ManipulatorLayer {
    pixels: Vec<(usize, usize, [f64; 3])>,
    keypoints: Option<([f64; 2], [f64; 2], [f64; 2])>,
}

fn render_manipulator(
    scene: &SceneSpec,
    camera: &CameraParams,
    pose: &Pose6D,
    pose2d: &Pose2D,
    last_dir: [f64; 2],
) -> Result<ManipulatorLayer> {
    let (w, h) = (camera.width, camera.height);
    let s = w.min(h) as f64 / REFERENCE_SIZE;
    let proj = |p: Vector3<f64>| -> Result<[f64; 2]> {
        let (u, v, _) = project_point(camera, &p)?;
        Ok([u, v])
    };
    let shoulder = scene.arm_base + Vector3::new(0.0, 0.0, SHOULDER_HEIGHT);
    let mut pixels = Vec::new();
    let put = |color: [f64; 3]| move |x: usize, y: usize| (x, y, color);
    let tip = [pose2d.u, pose2d.v];
    let d = if pose2d.valid { pose2d.d } else { last_dir };

    match scene.actor_kind {
        ActorKind::Robot => {
            let elbow = (shoulder + pose.position) * 0.5 + Vector3::new(0.0, 0.0, 0.12);
            let back = pose.position - pose.forward_axis() * 0.05;
            let (b, sh, el, bk) = (proj(scene.arm_base)?, proj(shoulder)?, proj(elbow)?, proj(back)?);
            let f = put(ARM_COLOR);
            raster::capsule(b, sh, 3.5 * s, w, h, |x, y| pixels.push(f(x, y)));
            raster::capsule(sh, el, 3.0 * s, w, h, |x, y| pixels.push(f(x, y)));
            raster::capsule(el, bk, 3.0 * s, w, h, |x, y| pixels.push(f(x, y)));
            let g = put(GRIPPER_COLOR);
            raster::capsule(bk, tip, 2.5 * s, w, h, |x, y| pixels.push(g(x, y)));
            let t = put(TIP_COLOR);
            raster::disk(tip[0], tip[1], 2.0 * s, w, h, |x, y| pixels.push(t(x, y)));
            Ok(ManipulatorLayer { pixels, keypoints: None })
        }
        ActorKind::HumanProxy => {
            let perp = [-d[1], d[0]];
            let off = |p: [f64; 2], v: [f64; 2], k: f64| [p[0] + v[0] * k, p[1] + v[1] * k];
            let thumb_tip = off(tip, perp, 2.5 * s);
            let index_tip = off(tip, perp, -2.5 * s);
            let thumb_base = off(thumb_tip, d, -4.0 * s);
            let palm = off(tip, d, -5.0 * s);
            let sh = proj(shoulder)?;
            let f = put(SKIN_COLOR);
            let mut plot = |x, y| pixels.push(f(x, y));
            raster::capsule(sh, palm, 5.0 * s, w, h, &mut plot);
            raster::disk(palm[0], palm[1], 3.5 * s, w, h, &mut plot);
            raster::capsule(thumb_base, thumb_tip, 2.0 * s, w, h, &mut plot);
            raster::capsule(palm, index_tip, 2.0 * s, w, h, &mut plot);
            for k in [thumb_base, thumb_tip, index_tip] {
                raster::disk(k[0], k[1], 1.5 * s, w, h, &mut plot);
            }
            Ok(ManipulatorLayer { pixels, keypoints: Some((thumb_base, thumb_tip, index_tip)) })
        }
    }
}

fn render_impl(
    scene: &SceneSpec,
    traj: &Pose6DoFTrajectory,
    camera: &CameraParams,
    n_frames: usize,
    with_manipulator: bool,
) -> Result<RenderOutput> {
    check_in_front(scene, camera)?;
    let timing = frame_timing(traj, n_frames)?;
    let objects = object_positions(scene, traj);
    let (w, h) = (camera.width, camera.height);

    let mut video = VideoArray::zeros(n_frames, h, w);
    let mut mask = MaskSequence::empty(n_frames, h, w);
    let mut poses = Vec::with_capacity(n_frames);
    let mut keypoints = (scene.actor_kind == ActorKind::HumanProxy).then(HandKeypointTrack::default);
    let mut boxes = keypoints.as_ref().map(|_| Vec::with_capacity(n_frames));
    let mut prev: Option<Pose2D> = None;
    let mut last_dir = [1.0, 0.0];

    for (t, &idx) in timing.indices.iter().enumerate() {
        let frame = render_scene_layer(scene, camera, &objects[idx]);
        video.set_frame(t, &frame)?;
        let pose = traj.pose(idx);
        let p2 = project_pose(camera, &pose, prev.as_ref())?;
        if p2.valid {
            last_dir = p2.d;
            prev = Some(p2);
        }
        poses.push(p2);
        if !with_manipulator {
            continue;
        }
        let layer = render_manipulator(scene, camera, &pose, &p2, last_dir)?;
        for (x, y, c) in layer.pixels {
            video.set_pixel(t, y, x, c);
            mask.set(t, y, x, true);
        }
        if let (Some(k), Some((tb, tt, it))) = (keypoints.as_mut(), layer.keypoints) {
            k.thumb_base.push(tb);
            k.thumb_tip.push(tt);
            k.index_tip.push(it);
            k.confidence.push(1.0);
        }
        if let Some(b) = boxes.as_mut() {
            b.push(BBox::of_mask(&mask, t));
        }
    }

    Ok(RenderOutput {
        video,
        manipulator_mask: mask,
        keypoints: if with_manipulator { keypoints } else { None },
        metadata: RenderMetadata {
            fps: timing.fps,
            frame_times: timing.times,
            trajectory_indices: timing.indices,
            poses,
            hand_boxes: if with_manipulator { boxes } else { None },
        },
    })
}

/// Render the scene with the manipulator drawn over it.
pub fn render_video(
    scene: &SceneSpec,
    traj: &Pose6DoFTrajectory,
    camera: &CameraParams,
    n_frames: usize,
) -> Result<RenderOutput> {
    render_impl(scene, traj, camera, n_frames, true)
}

/// Same scene and object motion as [`render_video`], manipulator omitted.
pub fn render_background(
    scene: &SceneSpec,
    traj: &Pose6DoFTrajectory,
    camera: &CameraParams,
    n_frames: usize,
) -> Result<VideoArray> {
    render_impl(scene, traj, camera, n_frames, false).map(|r| r.video)
}
