//! "AMCK" checkpoint container.
//!
//! Little-endian layout: magic `b"AMCK"`, `u32` format version, `u32` length
//! plus UTF-8 JSON metadata (train config, model config, counters, scheduler
//! state, best record, last metrics), `u32` tensor count, then per tensor:
//! `u32` name length, name, `u8` rank, `rank × u64` dims, `f32` data.
//! Tensor names are `model/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamW, BestRecord, MetricsReport, SchedulerState, TrainConfig, TrainState};
use crate::model::{Init, ModelInstance, QuartzConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("not a checkpoint")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match its model config: {0}")]
    ShapeMismatch(String),
}

#[derive(Serialize, Deserialize)]
struct Meta {
    train_config: TrainConfig,
    model_config: QuartzConfig,
    epoch: usize,
    step: u64,
    seed: u64,
    lr_scale: f64,
    adam_t: u64,
    scheduler: SchedulerState,
    best: Option<BestRecord>,
    metrics: Option<MetricsReport>,
}

/// A training state together with the config it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.write_u32::<LE>(name.len() as u32).unwrap();
    out.write_all(name.as_bytes()).unwrap();
    out.write_u8(t.shape().len() as u8).unwrap();
    for &d in t.shape() {
        out.write_u64::<LE>(d as u64).unwrap();
    }
    for &v in t.data() {
        out.write_f32::<LE>(v).unwrap();
    }
}

pub fn checkpoint_bytes(config: &TrainConfig, state: &TrainState) -> Vec<u8> {
    let meta = Meta {
        train_config: config.clone(),
        model_config: state.model.config().clone(),
        epoch: state.epoch,
        step: state.step,
        seed: state.seed,
        lr_scale: state.lr_scale,
        adam_t: state.optimizer.t,
        scheduler: state.scheduler.clone(),
        best: state.best,
        metrics: state.metrics.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let model = state.model.state_tensors();
    let names: Vec<&str> = state.model.params().iter().map(|p| p.name.as_str()).collect();
    let mut out = Vec::new();
    out.write_all(CHECKPOINT_MAGIC).unwrap();
    out.write_u32::<LE>(CHECKPOINT_VERSION).unwrap();
    out.write_u32::<LE>(json.len() as u32).unwrap();
    out.write_all(&json).unwrap();
    out.write_u32::<LE>((model.len() + 2 * names.len()) as u32).unwrap();
    for (name, t) in &model {
        write_tensor(&mut out, &format!("model/{name}"), t);
    }
    for (name, m) in names.iter().zip(&state.optimizer.m) {
        write_tensor(&mut out, &format!("adam.m/{name}"), m);
    }
    for (name, v) in names.iter().zip(&state.optimizer.v) {
        write_tensor(&mut out, &format!("adam.v/{name}"), v);
    }
    out
}

fn read_tensor(r: &mut Cursor<&[u8]>, len: usize) -> Result<(String, Tensor<f32>), CheckpointError> {
    let t = |_| CheckpointError::Truncated;
    let remaining = |r: &Cursor<&[u8]>| len - r.position() as usize;
    let name_len = r.read_u32::<LE>().map_err(t)? as usize;
    if name_len > remaining(r) {
        return Err(CheckpointError::Truncated);
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name).map_err(t)?;
    let name =
        String::from_utf8(name).map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
    let rank = r.read_u8().map_err(t)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u64::<LE>().map_err(t)? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} is too large")))?;
    if count.checked_mul(4).is_none_or(|b| b > remaining(r)) {
        return Err(CheckpointError::Truncated);
    }
    let mut data = vec![0f32; count];
    r.read_f32_into::<LE>(&mut data).map_err(t)?;
    let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok((name, tensor))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let t = |_| CheckpointError::Truncated;
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::NotACheckpoint);
    }
    let version = r.read_u32::<LE>().map_err(t)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len = r.read_u32::<LE>().map_err(t)? as usize;
    if json_len > bytes.len() - r.position() as usize {
        return Err(CheckpointError::Truncated);
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(t)?;
    let meta: Meta = serde_json::from_slice(&json)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    let count = r.read_u32::<LE>().map_err(t)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, tensor) = read_tensor(&mut r, bytes.len())?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.position() as usize != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    meta.train_config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut model = ModelInstance::build_with(meta.model_config, 0, Init::Zeros)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut model_tensors = BTreeMap::new();
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    for (name, tensor) in tensors {
        let (group, rest) = name
            .split_once('/')
            .ok_or_else(|| CheckpointError::Corrupt(format!("unexpected tensor {name}")))?;
        let target = match group {
            "model" => &mut model_tensors,
            "adam.m" => &mut adam_m,
            "adam.v" => &mut adam_v,
            _ => return Err(CheckpointError::Corrupt(format!("unexpected tensor {name}"))),
        };
        target.insert(rest.to_string(), tensor);
    }
    model
        .load_state(&model_tensors)
        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    let mut optimizer = AdamW::new(model.params().iter().map(|p| p.value.shape()));
    optimizer.t = meta.adam_t;
    if adam_m.len() != model.params().len() || adam_v.len() != model.params().len() {
        return Err(CheckpointError::ShapeMismatch(
            "optimizer moments do not cover every parameter".into(),
        ));
    }
    for (i, p) in model.params().iter().enumerate() {
        for (store, slot) in [(&mut adam_m, &mut optimizer.m[i]), (&mut adam_v, &mut optimizer.v[i])] {
            let t = store.remove(&p.name).ok_or_else(|| {
                CheckpointError::ShapeMismatch(format!("missing optimizer moment for {}", p.name))
            })?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "optimizer moment for {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            *slot = t;
        }
    }
    Ok(Checkpoint {
        config: meta.train_config,
        state: TrainState {
            model,
            optimizer,
            scheduler: meta.scheduler,
            epoch: meta.epoch,
            step: meta.step,
            best: meta.best,
            lr_scale: meta.lr_scale,
            seed: meta.seed,
            metrics: meta.metrics,
        },
    })
}

/// Atomic write through a temp file and rename.
pub fn save_checkpoint(config: &TrainConfig, state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    let io = |e: std::io::Error| CheckpointError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("amck.tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&checkpoint_bytes(config, state)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    checkpoint_from_bytes(&bytes)
}
