//! Mini-batch Adam training with seeded shuffling, the γ warm-up,
//! early stopping on a held-out carve-out, and resumable checkpoints.
//!
//! Every random draw is a pure function of `(seed, step, sample slot)` or
//! `(seed, epoch)`, and per-sample gradients are summed in fixed-size
//! chunks in batch order, so a run is bit-identical whether it executes
//! sequentially, in parallel, or is resumed from a checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::latent::LatentNoise;
use crate::model::{
    save_checkpoint, Checkpoint, Example, ModelConfig, ModelParams, Mode, PassOptions, TrainState, Vsl,
};
use crate::objective::{GammaMode, ObjectiveBreakdown};
use crate::voxel::Sample;

fn default_lr() -> f64 {
    5e-5
}

fn default_delta() -> f64 {
    1e-3
}

fn default_clip() -> Option<f64> {
    Some(10.0)
}

fn default_chunk() -> usize {
    4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: u64,
    /// Share of the training split held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Stop after this many optimizer steps, even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "GammaMode::default_warmup")]
    pub gamma: GammaMode,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    /// Write a checkpoint every this many epochs (the last one is always written).
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    /// Global-norm gradient clip; `null` disables it.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Samples per gradient work unit. Fixes the summation order, so it is
    /// part of the determinism contract.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub exec: Exec,
}

impl TrainConfig {
    pub fn new(batch_size: usize, max_epochs: u64) -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size,
            max_epochs,
            max_steps: None,
            seed: 0,
            delta: default_delta(),
            gamma: GammaMode::Warmup,
            early_stop: None,
            checkpoint_every: None,
            grad_clip: default_clip(),
            chunk_size: default_chunk(),
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be ≥ 1".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be ≥ 0, got {}", self.delta)));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be ≥ 0, got {g}")));
            }
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.val_fraction > 0.0 && es.val_fraction < 1.0) {
                return Err(Error::Config(
                    "early_stop needs patience ≥ 1 and val_fraction in (0, 1)".into(),
                ));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A bundled run description: model geometry plus training protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update. A NaN or infinite gradient aborts before anything changes.
    pub fn update(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f64) -> Result<()> {
        grads.check_finite()?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (b1f, b2f) = (b1 as f32, b2 as f32);
        let step_size = (lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = self.eps as f32;
        let iter = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in iter {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1f * *m + (1.0 - b1f) * g;
                *v = b2f * *v + (1.0 - b2f) * g * g;
                *p -= step_size * *m / (v.sqrt() / c2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_NOISE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_SPLIT: u64 = 4;

pub fn sample_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(seed, stream), a), b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub rec: f64,
    pub reg: f64,
    pub lat: f64,
    pub gamma: f64,
    pub total: f64,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_total: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStop,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub stop: StopReason,
    pub steps: u64,
}

/// Turns loaded samples into training examples; image samples need their
/// paired voxel grid.
pub fn examples_from(samples: &[Sample]) -> Result<Vec<Example<'_>>> {
    samples
        .iter()
        .map(|s| {
            let grid = s
                .grid()
                .ok_or_else(|| Error::Data(format!("{}: image sample has no paired voxel grid", s.path.display())))?;
            Ok(Example { grid, image: s.image() })
        })
        .collect()
}

pub struct Trainer {
    pub model: Vsl<f32>,
    pub adam: Adam,
    pub config: TrainConfig,
    pub state: TrainState,
    started: Instant,
}

impl Trainer {
    pub fn new(model: Vsl<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model.params);
        Ok(Trainer {
            model,
            adam,
            state: TrainState {
                train_config: Some(serde_json::to_value(&config)?),
                ..TrainState::default()
            },
            config,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint. The moments must be present.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (m, v) = ckpt
            .moments
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state to resume from".into()))?;
        let mut adam = Adam::new(&ckpt.model.params);
        adam.step = ckpt.state.step;
        adam.m = m;
        adam.v = v;
        Ok(Trainer {
            model: ckpt.model,
            adam,
            config,
            state: ckpt.state,
            started: Instant::now(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            state: self.state.clone(),
            moments: Some((self.adam.m.clone(), self.adam.v.clone())),
        }
    }

    fn gamma(&self) -> f64 {
        self.config.gamma.at(self.state.epoch)
    }

    fn pass(&self, slot: u64, mode: Mode) -> (LatentNoise<f32>, PassOptions) {
        let step = self.state.step;
        let seed = self.config.seed;
        let noise = match mode {
            Mode::Train => {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, STREAM_NOISE, step, slot));
                LatentNoise::sample(&self.model.config.hierarchy, &mut rng)
            }
            Mode::Eval => LatentNoise::zeros(&self.model.config.hierarchy),
        };
        let opts = PassOptions {
            delta: self.config.delta,
            gamma: self.gamma(),
            mode,
            dropout_seed: sample_seed(seed, STREAM_DROPOUT, step, slot),
        };
        (noise, opts)
    }

    /// Mean objective and gradient over a batch.
    pub fn batch_gradient(&self, batch: &[Example<'_>]) -> Result<(ObjectiveBreakdown, ModelParams<f32>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let chunks: Vec<(usize, &[Example<'_>])> = batch
            .chunks(self.config.chunk_size)
            .enumerate()
            .map(|(i, c)| (i * self.config.chunk_size, c))
            .collect();
        let parts = self.config.exec.try_map(&chunks, |_, (start, chunk)| {
            let mut grad = self.model.params.zeros_like();
            let mut outs = Vec::with_capacity(chunk.len());
            for (j, ex) in chunk.iter().enumerate() {
                let (noise, opts) = self.pass((start + j) as u64, Mode::Train);
                outs.push(self.model.loss_and_grad_into(*ex, &noise, &opts, &mut grad)?);
            }
            Ok::<_, Error>((outs, grad))
        })?;
        let mut total = self.model.params.zeros_like();
        let mut outs = Vec::with_capacity(batch.len());
        for (o, g) in parts {
            total.add_assign(&g);
            outs.extend(o);
        }
        total.scale(1.0 / batch.len() as f32);
        Ok((ObjectiveBreakdown::mean(&outs), total))
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[Example<'_>]) -> Result<ObjectiveBreakdown> {
        let (out, mut grad) = self.batch_gradient(batch)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("objective became non-finite at step {}", self.state.step)));
        }
        if let Some(clip) = self.config.grad_clip {
            let norm = grad.global_norm();
            if norm > clip {
                grad.scale((clip / norm) as f32);
            }
        }
        self.adam.update(&mut self.model.params, &grad, self.config.learning_rate)?;
        self.model.params.check_finite()?;
        self.state.step = self.adam.step;
        Ok(out)
    }

    /// Mean total objective without noise or dropout.
    pub fn evaluate(&self, data: &[Example<'_>]) -> Result<ObjectiveBreakdown> {
        let outs = self.config.exec.try_map(data, |i, ex| {
            let (noise, opts) = self.pass(i as u64, Mode::Eval);
            self.model.loss(*ex, &noise, &opts)
        })?;
        Ok(ObjectiveBreakdown::mean(&outs))
    }

    /// Splits indices into (train, validation) using the configured carve-out.
    pub fn split_indices(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        match self.config.early_stop {
            Some(es) if n >= 2 => {
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(self.config.seed, STREAM_SPLIT, 0, 0)));
                let n_val = ((n as f64 * es.val_fraction).ceil() as usize).clamp(1, n - 1);
                let val = idx.split_off(n - n_val);
                (idx, val)
            }
            _ => (idx, Vec::new()),
        }
    }

    fn epoch_order(&self, train: &[usize]) -> Vec<usize> {
        let mut order = train.to_vec();
        let seed = sample_seed(self.config.seed, STREAM_SHUFFLE, self.state.epoch, 0);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    fn save(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        save_checkpoint(&self.checkpoint(), &path)?;
        Ok(path)
    }

    /// Trains until `max_epochs`, `max_steps`, or early stopping.
    /// `on_epoch` sees each finished epoch's log line. With an output
    /// directory, `last.ckpt` is refreshed at the configured cadence and at
    /// the end, and `best.ckpt` whenever validation improves. A numerical
    /// failure aborts without overwriting the previous checkpoint.
    pub fn run(
        &mut self,
        data: &[Example<'_>],
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
    ) -> Result<TrainSummary> {
        if data.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let (train, val) = self.split_indices(data.len());
        let val_set: Vec<Example<'_>> = val.iter().map(|&i| data[i]).collect();
        let mut epochs = Vec::new();
        let bs = self.config.batch_size;
        let stop = loop {
            if self.state.epoch >= self.config.max_epochs {
                break StopReason::MaxEpochs;
            }
            let order = self.epoch_order(&train);
            let n_batches = order.len().div_ceil(bs) as u64;
            let mut hit_max_steps = false;
            while self.state.batch < n_batches {
                if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
                    hit_max_steps = true;
                    break;
                }
                let b = self.state.batch as usize;
                let batch: Vec<Example<'_>> = order[b * bs..((b + 1) * bs).min(order.len())]
                    .iter()
                    .map(|&i| data[i])
                    .collect();
                let out = self.step(&batch)?;
                log::debug!(
                    "epoch {} batch {} total {:.4} rec {:.4} reg {:.4} lat {:.4}",
                    self.state.epoch,
                    b,
                    out.total,
                    out.rec,
                    out.reg,
                    out.lat
                );
                let p = &mut self.state.partial;
                p.rec += out.rec;
                p.reg += out.reg;
                p.lat += out.lat;
                p.total += out.total;
                p.batches += 1;
                self.state.batch += 1;
            }
            if hit_max_steps {
                break StopReason::MaxSteps;
            }
            let p = std::mem::take(&mut self.state.partial);
            let n = p.batches.max(1) as f64;
            let mut entry = EpochLog {
                epoch: self.state.epoch,
                rec: p.rec / n,
                reg: p.reg / n,
                lat: p.lat / n,
                gamma: self.gamma(),
                total: p.total / n,
                wall_time: self.started.elapsed().as_secs_f64(),
                val_total: None,
            };
            let mut improved = false;
            if !val_set.is_empty() {
                let v = self.evaluate(&val_set)?.total;
                entry.val_total = Some(v);
                if self.state.best_val.is_none_or(|b| v < b) {
                    self.state.best_val = Some(v);
                    self.state.stale_epochs = 0;
                    improved = true;
                } else {
                    self.state.stale_epochs += 1;
                }
            }
            self.state.epoch += 1;
            self.state.batch = 0;
            on_epoch(&entry)?;
            epochs.push(entry);
            if let Some(dir) = out_dir {
                if improved {
                    self.save(dir, "best.ckpt")?;
                }
                if self.config.checkpoint_every.is_some_and(|k| self.state.epoch % k == 0) {
                    self.save(dir, "last.ckpt")?;
                }
            }
            if let Some(es) = self.config.early_stop {
                if self.state.stale_epochs >= es.patience {
                    break StopReason::EarlyStop;
                }
            }
        };
        if let Some(dir) = out_dir {
            self.save(dir, "last.ckpt")?;
        }
        Ok(TrainSummary {
            epochs,
            stop,
            steps: self.state.step,
        })
    }
}

impl GammaMode {
    fn default_warmup() -> Self {
        GammaMode::Warmup
    }
}
