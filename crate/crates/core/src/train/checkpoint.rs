//! `DL3C` checkpoint container.
//!
//! ```text
//! "DL3C" | version u8 | meta_len u32 | meta JSON
//! | count u32 | count x (name_len u32, name, rank u32, dims u32 x rank)
//! | payloads, f64 LE, in table order
//! ```
//!
//! Tensors are stored at full precision so a resumed run continues exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{DALightModel, ModelConfig};
use crate::nn::Module;
use crate::tensor::Tensor;

use super::optim::OptimState;
use super::trainer::{snapshot, BestSnapshot, EpochRecord, StepRecord, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DL3C";
pub const CHECKPOINT_VERSION: u8 = 1;

const MODEL: &str = "model/";
const BEST: &str = "best/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub init_seed: u64,
    pub train: Option<TrainConfig>,
    pub epochs_done: usize,
    pub optimizer_step: u64,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best: Option<(usize, f64)>,
}

/// Parsed container: metadata plus named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

fn u32_field(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::DimensionOverflow(format!("{what} {v} does not fit 32 bits")))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let meta = serde_json::to_vec(&ckpt.meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    buf.extend_from_slice(&u32_field(meta.len(), "metadata length")?);
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&u32_field(ckpt.tensors.len(), "tensor count")?);
    for (name, t) in &ckpt.tensors {
        buf.extend_from_slice(&u32_field(name.len(), "name length")?);
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&u32_field(t.dims().len(), "rank")?);
        for &d in t.dims() {
            buf.extend_from_slice(&u32_field(d, "extent")?);
        }
    }
    for (_, t) in &ckpt.tensors {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or_else(|| Error::DimensionOverflow(format!("{n} bytes")))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated { expected: end as u64, actual: self.bytes.len() as u64 });
        }
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    let found: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
    if found != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found });
    }
    let version = r.take(1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
    }
    let meta_len = r.u32()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Malformed(format!("checkpoint metadata: {e}")))?;
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimensionOverflow(format!("{name} {dims:?}")))?;
        table.push((name, dims, numel));
    }
    let mut tensors = Vec::with_capacity(table.len());
    for (name, dims, numel) in table {
        let nbytes = numel.checked_mul(8).ok_or_else(|| Error::DimensionOverflow(format!("{name} {dims:?}")))?;
        let data = r
            .take(nbytes)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        let t = Tensor::from_vec(dims, data).map_err(|e| Error::Malformed(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.at != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(Checkpoint { meta, tensors })
}

/// Copies `tensors` into the parameters of `model` by name. The name sets
/// must match exactly.
pub fn load_weights<M: Module + ?Sized>(model: &mut M, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let names = model.layer_params().names().into_iter().map(String::from).collect::<Vec<_>>();
    let missing: Vec<String> = names.iter().filter(|n| !tensors.contains_key(*n)).cloned().collect();
    let extra: Vec<String> = tensors.keys().filter(|k| !names.contains(k)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::TensorMismatch { missing, extra });
    }
    let mut bad = None;
    model.visit(&mut |p| {
        if bad.is_none() && tensors[p.name()].dims() != p.tensor().dims() {
            bad = Some(shape_err("checkpoint", format!("{} stored as {:?}, model has {:?}", p.name(), tensors[p.name()].dims(), p.tensor().dims())));
        }
    });
    if let Some(e) = bad {
        return Err(e);
    }
    model.visit_mut(&mut |p| *p.tensor_mut() = tensors[p.name()].clone());
    Ok(())
}

fn section(tensors: &[(String, Tensor)], prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
        .collect()
}

/// Model weights, optimizer moments and run history.
pub fn save_checkpoint(
    path: &Path,
    model: &DALightModel,
    init_seed: u64,
    state: &TrainState,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> =
        snapshot(model).into_iter().map(|(n, t)| (format!("{MODEL}{n}"), t)).collect();
    for (prefix, buffers) in [(ADAM_M, &state.optim.m), (ADAM_V, &state.optim.v)] {
        for (n, v) in buffers {
            tensors.push((format!("{prefix}{n}"), Tensor::from_vec(vec![v.len()], v.clone())?));
        }
    }
    if let Some(best) = &state.best {
        tensors.extend(best.weights.iter().map(|(n, t)| (format!("{BEST}{n}"), t.clone())));
    }
    let meta = CheckpointMeta {
        model: model.config().clone(),
        init_seed,
        train: train.cloned(),
        epochs_done: state.epochs_done,
        optimizer_step: state.optim.step,
        history: state.history.clone(),
        steps: state.steps.clone(),
        best: state.best.as_ref().map(|b| (b.epoch, b.val_dice)),
    };
    write_checkpoint(path, &Checkpoint { meta, tensors })
}

/// Saves only the weights, as a fresh state.
pub fn save_weights(path: &Path, model: &DALightModel, init_seed: u64, train: Option<&TrainConfig>) -> Result<()> {
    save_checkpoint(path, model, init_seed, &TrainState::default(), train)
}

/// Rebuilds the model from the stored configuration and restores weights
/// and training state.
pub fn load_checkpoint(path: &Path) -> Result<(DALightModel, TrainState, CheckpointMeta)> {
    let ckpt = read_checkpoint(path)?;
    let mut model = DALightModel::new(ckpt.meta.model.clone(), ckpt.meta.init_seed)?;
    load_weights(&mut model, &section(&ckpt.tensors, MODEL))?;
    let buffers = |prefix| -> BTreeMap<String, Vec<f64>> {
        section(&ckpt.tensors, prefix).into_iter().map(|(n, t)| (n, t.into_data())).collect()
    };
    let optim = OptimState { step: ckpt.meta.optimizer_step, m: buffers(ADAM_M), v: buffers(ADAM_V) };
    let best = ckpt.meta.best.map(|(epoch, val_dice)| {
        let mut weights: Vec<(String, Tensor)> = section(&ckpt.tensors, BEST).into_iter().collect();
        // restore model order
        let order = model.layer_params().names().into_iter().map(String::from).collect::<Vec<_>>();
        weights.sort_by_key(|(n, _)| order.iter().position(|o| o == n));
        BestSnapshot { epoch, val_dice, weights }
    });
    let state = TrainState {
        epochs_done: ckpt.meta.epochs_done,
        optim,
        steps: ckpt.meta.steps.clone(),
        history: ckpt.meta.history.clone(),
        best,
    };
    Ok((model, state, ckpt.meta))
}

/// Loads only the `model/` weights of a checkpoint into `model`.
pub fn restore_into(model: &mut DALightModel, path: &Path) -> Result<()> {
    let ckpt = read_checkpoint(path)?;
    load_weights(model, &section(&ckpt.tensors, MODEL))
}

/// Applies a best-weights snapshot to `model`.
pub fn apply_snapshot(model: &mut DALightModel, weights: &[(String, Tensor)]) -> Result<()> {
    load_weights(model, &weights.iter().cloned().collect())
}
