//! The run configuration: one file (TOML or JSON by extension) plus
//! `key=value` overrides on dotted paths.

use std::fs;
use std::path::{Path, PathBuf};

use h2r_core::h2rep::OverlaySpec;
use h2r_core::perception::BackendSelection;
use h2r_core::scene_sim::SceneConfig;
use h2r_model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const CONFIG_ENV: &str = "H2R_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Robot scenes rendered by `gen-data`, seeded `seed + i`.
    pub robot_clips: usize,
    /// Human-proxy scenes, seeded after the robot ones.
    pub human_clips: usize,
    /// Robot pairs held out as the validation split.
    pub val_clips: usize,
    /// Frames rendered per clip.
    pub frames: usize,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { robot_clips: 8, human_clips: 2, val_clips: 0, frames: 17, scene: SceneConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateConfig {
    /// Frame directory of a raw video; when unset the human clips from `gen-data` are used.
    pub input: Option<PathBuf>,
    /// Frame rate of `input`; defaults to the run fps.
    pub input_fps: Option<f64>,
    /// Resample to the run resolution and fps, then trim to a conforming length.
    pub preprocess: bool,
    pub sampler_steps: usize,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        Self { input: None, input_fps: None, preprocess: true, sampler_steps: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Dilation of the detected-manipulator exclusion in background scoring.
    pub dilation_radius: usize,
    /// Also reconstruct this many manifest pairs (validation split first) and score SSIM.
    pub max_pairs: usize,
    pub csv: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { dilation_radius: 2, max_pairs: 4, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Root of every stage directory.
    pub out_dir: PathBuf,
    /// Indicator geometry; scaled from the 64 px defaults when unset.
    pub overlay: Option<OverlaySpec>,
    pub backends: BackendSelection,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Initialize from this checkpoint instead of random weights.
    pub base_checkpoint: Option<PathBuf>,
    pub translate: TranslateConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            height: 64,
            width: 64,
            fps: 10.0,
            out_dir: PathBuf::from("runs/default"),
            overlay: None,
            backends: BackendSelection::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            base_checkpoint: None,
            translate: TranslateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read `path` (or defaults when `None`) and apply `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => read_value(p)?,
            None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
        };
        let reference = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        for o in overrides {
            apply_override(&mut value, &reference, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlay(&self) -> OverlaySpec {
        self.overlay.unwrap_or_else(|| OverlaySpec::for_resolution(self.width, self.height))
    }

    /// Every violated field, joined into one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        let patch = self.model.tokenizer.patch;
        check(self.workers >= 1, format!("workers: must be at least 1, got {}", self.workers));
        check(self.height > 0 && patch > 0 && self.height % patch == 0, format!("height: {} is not a positive multiple of model.tokenizer.patch {patch}", self.height));
        check(self.width > 0 && patch > 0 && self.width % patch == 0, format!("width: {} is not a positive multiple of model.tokenizer.patch {patch}", self.width));
        check(self.fps > 0.0 && self.fps.is_finite(), format!("fps: must be positive, got {}", self.fps));
        check(self.data.frames >= 1, "data.frames: must be at least 1".into());
        check(self.data.robot_clips >= 1, "data.robot_clips: must be at least 1".into());
        check(self.data.val_clips < self.data.robot_clips.max(1), format!("data.val_clips: {} leaves no training pairs", self.data.val_clips));
        check(self.translate.sampler_steps >= 1, "translate.sampler_steps: must be at least 1".into());
        check(self.translate.input_fps.is_none_or(|f| f > 0.0), "translate.input_fps: must be positive".into());
        if let Some(p) = &self.translate.input {
            check(p.is_dir(), format!("translate.input: {} is not a directory", p.display()));
        }
        if let Some(p) = &self.base_checkpoint {
            check(p.is_file(), format!("base_checkpoint: {} does not exist", p.display()));
        }
        let sections: [(&str, std::result::Result<(), String>); 5] = [
            ("overlay", self.overlay().validate().map_err(|e| e.to_string())),
            ("backends", self.backends.validate().map_err(|e| e.to_string())),
            ("data.scene", self.data.scene.validate().map_err(|e| e.to_string())),
            ("model", self.model.validate().map_err(|e| e.to_string())),
            ("train", self.train.validate().map_err(|e| e.to_string())),
        ];
        for (name, r) in sections {
            if let Err(e) = r {
                bad.push(format!("{name}: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("\n  ")))
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn read_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
        Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        other => Err(Error::Config(format!(
            "{}: unknown config extension {:?} (expected .toml or .json)",
            path.display(),
            other.unwrap_or("")
        ))),
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Holder {
        v: toml::Value,
    }
    match toml::from_str::<Holder>(&format!("v = {raw}")) {
        Ok(h) => serde_json::to_value(h.v).unwrap_or(Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Set `key.path=value` in `value`. The path must exist in the default config.
pub fn apply_override(value: &mut Value, reference: &Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut known = Some(reference);
    for p in &parts {
        known = known.and_then(|v| v.get(p));
    }
    // Optional sections default to null; anything below them is accepted.
    let under_null = (1..parts.len()).any(|k| {
        let mut r = Some(reference);
        for p in &parts[..k] {
            r = r.and_then(|v| v.get(p));
        }
        matches!(r, Some(Value::Null))
    });
    if known.is_none() && !under_null {
        return Err(Error::Config(format!("override {key}: no such config key")));
    }
    let mut cur = value;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert(Value::Null);
    }
    if !cur.is_object() {
        *cur = Value::Object(Default::default());
    }
    let mut v = parse_literal(raw.trim());
    // Path-like and enum-like fields arrive as bare strings already; numbers meant as strings stay strings.
    if known.is_some_and(Value::is_string) && !v.is_string() {
        v = Value::String(raw.trim().to_string());
    }
    cur.as_object_mut().unwrap().insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}

/// Config path from the flag, else from the environment.
pub fn resolve_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}
