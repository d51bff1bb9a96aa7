#![allow(dead_code)]

use h2r_core::scene_sim::{
    default_camera, make_scene, plan_trajectory, render_background, render_video, ActorKind, Pose6DoFTrajectory,
    RenderOutput, SceneConfig, SceneSpec,
};
use h2r_core::{CameraParams, Clip, VideoArray};

pub struct Sim {
    pub scene: SceneSpec,
    pub traj: Pose6DoFTrajectory,
    pub camera: CameraParams,
    pub render: RenderOutput,
    pub background: VideoArray,
    pub clip: Clip,
}

pub fn sim(seed: u64, size: usize, frames: usize, actor: ActorKind) -> Sim {
    let cfg = SceneConfig { actor_kind: actor, ..Default::default() };
    let scene = make_scene(seed, &cfg).unwrap();
    let traj = plan_trajectory(&scene, seed).unwrap();
    let camera = default_camera(size, size).unwrap();
    let render = render_video(&scene, &traj, &camera, frames).unwrap();
    let background = render_background(&scene, &traj, &camera, frames).unwrap();
    let clip = Clip::from_render(format!("sim{seed}"), &render, background.clone());
    Sim { scene, traj, camera, render, background, clip }
}

pub fn robot(seed: u64) -> Sim {
    sim(seed, 64, 17, ActorKind::Robot)
}

pub fn human(seed: u64) -> Sim {
    sim(seed, 64, 17, ActorKind::HumanProxy)
}
