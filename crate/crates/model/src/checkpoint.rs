//! Self-describing safetensors checkpoints: parameters, role partition,
//! optimizer moments, step counter and config in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::network::{Generator, ModelConfig, ParamRole, ParamStore};
use crate::optim::{Adam, AdamConfig};

pub const FORMAT_VERSION: &str = "1";
const PARAM_PREFIX: &str = "param.";
const ADAM_M_PREFIX: &str = "adam.m.";
const ADAM_V_PREFIX: &str = "adam.v.";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: Generator,
    pub optimizer: Option<Adam>,
    pub step: u64,
    pub seed: u64,
    /// Free-form JSON stored alongside (e.g. the training config).
    pub extra: serde_json::Value,
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, shape, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, shape, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Contract(format!("cannot store dtype {other:?}"))),
    })
}

fn tensor_from_view(view: &TensorView<'_>, path: &Path, name: &str) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    let dev = Device::Cpu;
    Ok(match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &dev)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &dev)?
        }
        other => return Err(Error::checkpoint(path, format!("tensor {name} has unsupported dtype {other:?}"))),
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config types serialize")
}

pub fn save_checkpoint(
    path: &Path,
    generator: &Generator,
    optimizer: Option<&Adam>,
    step: u64,
    seed: u64,
    extra: &serde_json::Value,
) -> Result<()> {
    let mut blobs: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut roles = BTreeMap::new();
    for (name, p) in generator.params.iter() {
        let (dt, shape, bytes) = tensor_bytes(p.var.as_tensor())?;
        blobs.push((format!("{PARAM_PREFIX}{name}"), dt, shape, bytes));
        roles.insert(name.clone(), p.role);
    }
    let mut meta = HashMap::new();
    meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("config".to_string(), to_json(&generator.config));
    meta.insert("roles".to_string(), to_json(&roles));
    meta.insert("step".to_string(), step.to_string());
    meta.insert("seed".to_string(), seed.to_string());
    meta.insert("extra".to_string(), extra.to_string());
    if let Some(opt) = optimizer {
        meta.insert("adam_config".to_string(), to_json(&opt.config));
        meta.insert("adam_step".to_string(), opt.step.to_string());
        for (prefix, map) in [(ADAM_M_PREFIX, &opt.m), (ADAM_V_PREFIX, &opt.v)] {
            for (name, t) in map {
                let (dt, shape, bytes) = tensor_bytes(t)?;
                blobs.push((format!("{prefix}{name}"), dt, shape, bytes));
            }
        }
    }
    let views: Vec<(String, TensorView<'_>)> = blobs
        .iter()
        .map(|(n, dt, shape, bytes)| Ok((n.clone(), TensorView::new(*dt, shape.clone(), bytes).map_err(|e| Error::checkpoint(path, e.to_string()))?)))
        .collect::<Result<_>>()?;
    let buf = safetensors::tensor::serialize(views, Some(meta)).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |r: String| Error::checkpoint(path, r);
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| bad(e.to_string()))?;
    let meta = header.metadata().clone().ok_or_else(|| bad("missing metadata".into()))?;
    let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata field {k}")));
    let version = field("format_version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let parse = |k: &str| -> Result<serde_json::Value> { serde_json::from_str(field(k)?).map_err(|e| bad(format!("{k}: {e}"))) };
    let config: ModelConfig = serde_json::from_value(parse("config")?).map_err(|e| bad(format!("config: {e}")))?;
    let roles: BTreeMap<String, ParamRole> = serde_json::from_value(parse("roles")?).map_err(|e| bad(format!("roles: {e}")))?;
    let num = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
    let (step, seed) = (num("step")?, num("seed")?);
    let extra = parse("extra")?;

    let st = SafeTensors::deserialize(&buf).map_err(|e| bad(e.to_string()))?;
    let mut params = ParamStore::default();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, view) in st.tensors() {
        let t = tensor_from_view(&view, path, &name)?;
        if let Some(p) = name.strip_prefix(PARAM_PREFIX) {
            let role = *roles.get(p).ok_or_else(|| bad(format!("parameter {p} has no role")))?;
            params.insert(p, &t, role)?;
        } else if let Some(p) = name.strip_prefix(ADAM_M_PREFIX) {
            m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(ADAM_V_PREFIX) {
            v.insert(p.to_string(), t);
        } else {
            return Err(bad(format!("unexpected tensor {name}")));
        }
    }
    let generator = Generator::from_params(config, params).map_err(|e| bad(e.to_string()))?;
    let optimizer = match meta.get("adam_config") {
        None => None,
        Some(c) => {
            let config: AdamConfig = serde_json::from_str(c).map_err(|e| bad(format!("adam_config: {e}")))?;
            Some(Adam { config, step: num("adam_step")?, m, v })
        }
    };
    Ok(Checkpoint { generator, optimizer, step, seed, extra })
}
