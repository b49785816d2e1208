use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Vsl};
use crate::archive::{load_archive, save_archive, Archive, NamedTensor};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// Optimizer and schedule position saved alongside the weights so a run
/// can resume exactly where it stopped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub step: u64,
    /// Next batch within the current epoch.
    #[serde(default)]
    pub batch: u64,
    /// Running per-batch sums of the current epoch, so an epoch resumed
    /// mid-way still reports its full mean.
    #[serde(default)]
    pub partial: EpochSums,
    pub best_val: Option<f64>,
    pub stale_epochs: u64,
    /// Training configuration the run was started with, if any.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSums {
    pub rec: f64,
    pub reg: f64,
    pub lat: f64,
    pub total: f64,
    pub batches: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Vsl<f32>,
    pub state: TrainState,
    /// Adam first and second moments, same layout as the parameters.
    pub moments: Option<(ModelParams<f32>, ModelParams<f32>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: ModelConfig,
    state: TrainState,
}

fn push_all(out: &mut Vec<NamedTensor>, prefix: &str, params: &ModelParams<f32>) {
    for (name, t) in params.tensors() {
        out.push(NamedTensor {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        });
    }
}

fn fill(archive: &Archive, prefix: &str, params: &mut ModelParams<f32>) -> Result<()> {
    for (name, slot) in params.tensors_mut() {
        let full = format!("{prefix}{name}");
        let t = archive
            .get(&full)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {full}")))?;
        if t.shape != slot.shape() {
            return Err(Error::shape(format!(
                "tensor {full} has shape {:?}, config expects {:?}",
                t.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::from_vec(&t.shape, t.data.clone())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<Archive> {
        let mut tensors = Vec::new();
        push_all(&mut tensors, "", &self.model.params);
        if let Some((m, v)) = &self.moments {
            push_all(&mut tensors, "adam.m.", m);
            push_all(&mut tensors, "adam.v.", v);
        }
        let metadata = serde_json::to_value(Metadata {
            config: self.model.config.clone(),
            state: self.state.clone(),
        })?;
        Ok(Archive {
            kind: CHECKPOINT_KIND.into(),
            metadata,
            tensors,
        })
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        if archive.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("archive holds {:?}, not a checkpoint", archive.kind)));
        }
        let meta: Metadata = serde_json::from_value(archive.metadata.clone())?;
        let mut params = ModelParams::<f32>::init(&meta.config, 0)?;
        fill(archive, "", &mut params)?;
        let expected = params.tensors().len();
        let moments = if archive.get(&format!("adam.m.{}", params.tensors()[0].0)).is_some() {
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            fill(archive, "adam.m.", &mut m)?;
            fill(archive, "adam.v.", &mut v)?;
            Some((m, v))
        } else {
            None
        };
        let stored = expected * if moments.is_some() { 3 } else { 1 };
        if archive.tensors.len() != stored {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, expected {stored}",
                archive.tensors.len()
            )));
        }
        Ok(Checkpoint {
            model: Vsl::from_parts(meta.config, params)?,
            state: meta.state,
            moments,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    save_archive(&ckpt.to_archive()?, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_archive(&load_archive(path)?)
}
