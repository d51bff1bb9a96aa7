//! Render one simulated clip (video, background, mask) as PNG directories.
//!
//! cargo run -p h2r-core --example render_scene -- <out_dir> [seed] [size] [human]

use std::path::PathBuf;

use h2r_core::scene_sim::{self, ActorKind, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("render_out"));
    let seed: u64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let size: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let actor_kind = if args.get(4).is_some_and(|s| s == "human") { ActorKind::HumanProxy } else { ActorKind::Robot };

    let scene = scene_sim::make_scene(seed, &SceneConfig { actor_kind, ..Default::default() })?;
    let traj = scene_sim::plan_trajectory(&scene, seed)?;
    let camera = scene_sim::default_camera(size, size)?;
    let r = scene_sim::render_video(&scene, &traj, &camera, 17)?;
    let bg = scene_sim::render_background(&scene, &traj, &camera, 17)?;
    r.video.save_png_dir(&out.join("video"))?;
    bg.save_png_dir(&out.join("background"))?;
    r.manipulator_mask.save_png_dir(&out.join("mask"))?;
    println!("fps {:.2}, {} frames", r.metadata.fps, r.video.frames());
    Ok(())
}
