//! The six commands. Each stage builds its output in `<dir>.partial` and
//! swaps it in only on success, so a failure leaves earlier artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};

use h2r_core::datapipe::{
    build_human_sample, build_robot_pair, conforming_len, load_manifest, par_map, save_manifest, standardize_clip, Split,
    TrainingPair, MAX_CLIP_FRAMES,
};
use h2r_core::eval::{evaluate_clip, write_csv, write_report, EvalReport};
use h2r_core::perception::Perception;
use h2r_core::scene_sim::{default_camera, make_scene, plan_trajectory, render_background, render_video, ActorKind, SceneConfig};
use h2r_core::{Clip, VideoArray};
use h2r_model::train::FINAL_CHECKPOINT;
use h2r_model::{load_checkpoint, sample, Generator, TrainMode, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result, StageContext, StageFailure};
use crate::store::{
    load_clip, read_json, save_clip, subdirs, write_json, ClipMeta, Layout, Translation, CONFIG_SNAPSHOT, REPORT_CSV,
    REPORT_FILE, STAGE_MARKER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    BuildPairs,
    Train,
    Translate,
    Eval,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::BuildPairs => "build-pairs",
            Command::Train => "train",
            Command::Translate => "translate",
            Command::Eval => "eval",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// `--resume` found the stage complete for the same inputs.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageMarker {
    stage: String,
    fingerprint: Value,
}

/// The config fields each stage depends on, including everything upstream.
fn fingerprint(cfg: &RunConfig, cmd: Command) -> Value {
    let gen = json!({"seed": cfg.seed, "height": cfg.height, "width": cfg.width, "data": cfg.data});
    let pairs = json!({"up": gen, "backends": cfg.backends, "overlay": cfg.overlay(), "max_frames": cfg.train.max_frames});
    let train = json!({"up": pairs, "model": cfg.model, "train": cfg.train, "base": cfg.base_checkpoint});
    let translate = json!({"up": train, "fps": cfg.fps, "translate": cfg.translate});
    let eval = json!({"up": translate, "eval": cfg.eval});
    match cmd {
        Command::GenData => gen,
        Command::BuildPairs => pairs,
        Command::Train => train,
        Command::Translate => translate,
        Command::Eval | Command::Pipeline => eval,
    }
}

fn partial_dir(dir: &Path) -> PathBuf {
    let mut s = dir.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Run `body` in a staging directory and publish it as `dir`.
fn run_stage(
    cfg: &RunConfig,
    cmd: Command,
    dir: &Path,
    resume: bool,
    body: impl FnOnce(&Path) -> Result<()>,
) -> Result<Outcome> {
    let fp = fingerprint(cfg, cmd);
    let marker_path = dir.join(STAGE_MARKER);
    if resume && marker_path.is_file() {
        if let Ok(m) = read_json::<StageMarker>(&marker_path) {
            if m.stage == cmd.name() && m.fingerprint == fp {
                tracing::info!(stage = cmd.name(), dir = %dir.display(), "complete for this config, skipping");
                return Ok(Outcome::Skipped);
            }
        }
    }
    let staging = partial_dir(dir);
    if staging.exists() && !resume {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    write_json(&staging.join(CONFIG_SNAPSHOT), cfg)?;
    tracing::info!(stage = cmd.name(), "running");
    body(&staging)?;
    write_json(&staging.join(STAGE_MARKER), &StageMarker { stage: cmd.name().into(), fingerprint: fp })?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
    Ok(Outcome::Ran)
}

pub fn run(cfg: &RunConfig, cmd: Command, resume: bool) -> Result<Vec<(Command, Outcome)>> {
    let steps: Vec<Command> = match cmd {
        Command::Pipeline => vec![Command::GenData, Command::BuildPairs, Command::Train, Command::Translate, Command::Eval],
        c => vec![c],
    };
    let mut out = Vec::new();
    for c in steps {
        let outcome = match c {
            Command::GenData => gen_data(cfg, resume)?,
            Command::BuildPairs => build_pairs(cfg, resume)?,
            Command::Train => train(cfg, resume)?,
            Command::Translate => translate(cfg, resume)?,
            Command::Eval => eval(cfg, resume)?,
            Command::Pipeline => unreachable!(),
        };
        out.push((c, outcome));
    }
    Ok(out)
}

struct SceneJob {
    id: String,
    seed: u64,
    actor: ActorKind,
}

pub fn gen_data(cfg: &RunConfig, resume: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.out_dir);
    run_stage(cfg, Command::GenData, &layout.data(), resume, |dir| {
        let robot = (0..cfg.data.robot_clips).map(|i| SceneJob {
            id: format!("robot_{i:04}"),
            seed: cfg.seed + i as u64,
            actor: ActorKind::Robot,
        });
        let human = (0..cfg.data.human_clips).map(|i| SceneJob {
            id: format!("human_{i:04}"),
            seed: cfg.seed + (cfg.data.robot_clips + i) as u64,
            actor: ActorKind::HumanProxy,
        });
        let jobs: Vec<SceneJob> = robot.chain(human).collect();
        let camera = default_camera(cfg.width, cfg.height).stage("gen-data")?;
        par_map(cfg.workers, &jobs, |job| {
            let run = || -> h2r_core::Result<()> {
                let scene_cfg = SceneConfig { actor_kind: job.actor, ..cfg.data.scene.clone() };
                let scene = make_scene(job.seed, &scene_cfg)?;
                let traj = plan_trajectory(&scene, job.seed)?;
                let render = render_video(&scene, &traj, &camera, cfg.data.frames)?;
                let background = render_background(&scene, &traj, &camera, cfg.data.frames)?;
                let clip = Clip::from_render(job.id.clone(), &render, background);
                let meta = ClipMeta {
                    id: job.id.clone(),
                    actor: job.actor,
                    seed: job.seed,
                    fps: render.metadata.fps,
                    camera: camera.clone(),
                    trajectory: traj,
                    scene,
                    render: render.metadata.clone(),
                    keypoints: render.keypoints.clone(),
                };
                let sub = if job.actor == ActorKind::Robot { "robot" } else { "human" };
                save_clip(&dir.join(sub).join(&job.id), &meta, &clip)
            };
            run().map_err(|e| e.in_clip(&job.id))
        })
        .stage("gen-data")?;
        Ok(())
    })
}

/// Resize to the run resolution and trim to a conforming length of at most `max`.
fn conform(clip: &Clip, cfg: &RunConfig, max: usize) -> h2r_core::Result<Clip> {
    let (c, _) = standardize_clip(clip, (cfg.height, cfg.width), clip.fps)?;
    let len = conforming_len(c.frames().min(max));
    Ok(c.window(0, len))
}

pub fn build_pairs(cfg: &RunConfig, resume: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.out_dir);
    let robot_dir = layout.robot_clips();
    run_stage(cfg, Command::BuildPairs, &layout.pairs(), resume, |dir| {
        let perception = Perception::new(&cfg.backends).stage("build-pairs")?;
        let overlay = cfg.overlay();
        let clips = subdirs(&robot_dir)?;
        let max = cfg.train.max_frames.min(MAX_CLIP_FRAMES);
        let mut pairs: Vec<TrainingPair> = par_map(cfg.workers, &clips, |path| {
            let (meta, clip) = load_clip(path)?;
            let run = || -> h2r_core::Result<TrainingPair> {
                let clip = conform(&clip, cfg, max)?;
                let camera = meta.camera.resized(cfg.width, cfg.height)?;
                let mut pair = build_robot_pair(&clip, &meta.trajectory, &camera, &perception, &overlay)?;
                pair.source_seed = Some(meta.seed);
                Ok(pair)
            };
            run().map_err(|e| e.in_clip(&meta.id))
        })
        .stage("build-pairs")?;
        let n = pairs.len();
        for (i, p) in pairs.iter_mut().enumerate() {
            if i + cfg.data.val_clips >= n {
                p.split = Split::Val;
            }
        }
        save_manifest(&pairs, dir).stage("build-pairs")?;
        Ok(())
    })
}

/// Newest `checkpoint_*.safetensors` (or the final one) in `dir`.
fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("checkpoint_") && name.ends_with(".safetensors")
        })
        .collect();
    found.sort();
    found.pop().or_else(|| Some(dir.join(FINAL_CHECKPOINT)).filter(|p| p.is_file()))
}

fn training_set(pairs_dir: &Path) -> Result<Vec<TrainingPair>> {
    let manifest = load_manifest(pairs_dir).stage("train")?;
    let mut pairs = Vec::new();
    for i in manifest.split_indices(Split::Train) {
        pairs.push(manifest.load_pair(pairs_dir, i).stage("train")?);
    }
    if pairs.is_empty() {
        return Err(Error::Stage { stage: "train", source: Box::new(StageFailure::Other("no training pairs in manifest".into())) });
    }
    Ok(pairs)
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.out_dir);
    let pairs_dir = layout.pairs();
    let final_dir = layout.train();
    run_stage(cfg, Command::Train, &final_dir, resume, |dir| {
        let pairs = training_set(&pairs_dir)?;
        let resume_from = if resume {
            latest_checkpoint(dir).or_else(|| latest_checkpoint(&final_dir))
        } else {
            None
        };
        let mut trainer = match resume_from {
            Some(path) => {
                let t = Trainer::resume(&path, cfg.train.clone()).stage("train")?;
                if t.generator.config != cfg.model {
                    return Err(Error::Config(format!("{}: model config differs from the run config", path.display())));
                }
                tracing::info!(checkpoint = %path.display(), step = t.step, "resuming");
                if !path.starts_with(dir) {
                    // Keep the step log continuous across the swap into the staging dir.
                    if let Some(src) = path.parent() {
                        let log = src.join(h2r_model::train::LOG_FILE);
                        if log.is_file() {
                            fs::copy(&log, dir.join(h2r_model::train::LOG_FILE)).map_err(|e| Error::io(&log, e))?;
                        }
                    }
                }
                t
            }
            None => {
                let generator = match &cfg.base_checkpoint {
                    Some(p) => {
                        let ck = load_checkpoint(p).stage("train")?;
                        if ck.generator.config != cfg.model {
                            return Err(Error::Config(format!("base_checkpoint: {} was trained with a different model config", p.display())));
                        }
                        ck.generator
                    }
                    None => {
                        if cfg.train.mode == TrainMode::LoraOnly {
                            tracing::warn!("lora-only training without base_checkpoint: the frozen base is random-initialized");
                        }
                        Generator::new(cfg.model.clone(), cfg.seed).stage("train")?
                    }
                };
                Trainer::new(generator, cfg.train.clone()).stage("train")?
            }
        };
        let logs = trainer.run(&pairs, Some(dir)).stage("train")?;
        if let Some(last) = logs.last() {
            tracing::info!(step = last.step, loss = last.loss, "training finished");
        }
        Ok(())
    })
}

fn raw_input_clip(cfg: &RunConfig, path: &Path) -> Result<Clip> {
    let video = VideoArray::load_png_dir(path).stage("translate")?;
    let id = path.file_name().and_then(|n| n.to_str()).unwrap_or("input").to_string();
    Ok(Clip { id, video, fps: cfg.translate.input_fps.unwrap_or(cfg.fps), truth: None })
}

pub fn translate(cfg: &RunConfig, resume: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.out_dir);
    let ck_path = layout.train().join(FINAL_CHECKPOINT);
    let human_dir = layout.human_clips();
    run_stage(cfg, Command::Translate, &layout.translate(), resume, |dir| {
        let clips: Vec<Clip> = match &cfg.translate.input {
            Some(p) => vec![raw_input_clip(cfg, p)?],
            None => subdirs(&human_dir)?
                .iter()
                .map(|d| load_clip(d).map(|(_, c)| c))
                .collect::<h2r_core::Result<_>>()
                .stage("translate")?,
        };
        let tk = cfg.model.tokenizer;
        let prepared: Vec<Clip> = clips
            .iter()
            .map(|c| {
                if cfg.translate.preprocess {
                    let fps = if cfg.translate.input.is_some() { cfg.fps } else { c.fps };
                    let (s, _) = standardize_clip(c, (cfg.height, cfg.width), fps)?;
                    let len = conforming_len(s.frames().min(MAX_CLIP_FRAMES));
                    Ok(s.window(0, len))
                } else {
                    tk.grid(c.frames(), c.video.height(), c.video.width())
                        .map_err(|e| h2r_core::Error::Contract(format!("clip {}: {e}", c.id)))?;
                    Ok(c.clone())
                }
            })
            .collect::<h2r_core::Result<_>>()
            .stage("translate")?;
        let generator = load_checkpoint(&ck_path).stage("translate")?.generator;
        let perception = Perception::new(&cfg.backends).stage("translate")?;
        let overlay = cfg.overlay();
        let prompt = generator.config.prompts[0].clone();
        for (i, clip) in prepared.iter().enumerate() {
            let s = build_human_sample(clip, &perception, &overlay).stage("translate")?;
            let generated = sample(&generator, &s.h2rep, &prompt, cfg.translate.sampler_steps, cfg.seed + i as u64)
                .map_err(|e| h2r_core_clip(e, &clip.id))
                .stage("translate")?;
            let t = Translation { id: clip.id.clone(), h2rep: s.h2rep, generated, background: s.background, poses: s.poses };
            t.save(&dir.join(&clip.id)).stage("translate")?;
        }
        Ok(())
    })
}

fn h2r_core_clip(e: h2r_model::Error, clip: &str) -> StageFailure {
    match e {
        h2r_model::Error::Core(c) => StageFailure::Core(c.in_clip(clip)),
        other => StageFailure::Other(format!("clip {clip}: {other}")),
    }
}

pub fn eval(cfg: &RunConfig, resume: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.out_dir);
    let (translate_dir, pairs_dir, ck_path) = (layout.translate(), layout.pairs(), layout.train().join(FINAL_CHECKPOINT));
    run_stage(cfg, Command::Eval, &layout.eval(), resume, |dir| {
        let r = cfg.eval.dilation_radius;
        let mut clips = Vec::new();
        if translate_dir.is_dir() {
            for d in subdirs(&translate_dir)? {
                let t = Translation::load(&d).stage("eval")?;
                clips.push(evaluate_clip(&t.id, &t.generated, None, &t.background, Some(&t.poses), r).stage("eval")?);
            }
        }
        if cfg.eval.max_pairs > 0 && pairs_dir.is_dir() && ck_path.is_file() {
            let manifest = load_manifest(&pairs_dir).stage("eval")?;
            let generator = load_checkpoint(&ck_path).stage("eval")?.generator;
            let mut order = manifest.split_indices(Split::Val);
            order.extend(manifest.split_indices(Split::Train));
            for (k, i) in order.into_iter().take(cfg.eval.max_pairs).enumerate() {
                let p = manifest.load_pair(&pairs_dir, i).stage("eval")?;
                let seed = cfg.seed + 10_000 + k as u64;
                let gen = sample(&generator, &p.h2rep, &p.prompt, cfg.translate.sampler_steps, seed)
                    .map_err(|e| h2r_core_clip(e, &p.id))
                    .stage("eval")?;
                let id = format!("pair:{}", p.id);
                clips.push(evaluate_clip(&id, &gen, Some(&p.target), &p.target, Some(&p.poses), r).stage("eval")?);
            }
        }
        let report = EvalReport::new(clips, cfg.seed, cfg.to_json()).stage("eval")?;
        write_report(&report, &dir.join(REPORT_FILE)).stage("eval")?;
        if cfg.eval.csv {
            write_csv(&report, &dir.join(REPORT_CSV)).stage("eval")?;
        }
        Ok(())
    })
}
