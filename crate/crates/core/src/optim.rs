//! Adam, the staircase learning-rate schedule, and the mini-batch training
//! loop.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::nn::{network_backward, Architecture, NetworkParams, DEFAULT_HIDDEN_CHANNELS};
use crate::phantom::Dataset;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates and the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
    /// Number of updates applied so far.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(arch: Architecture) -> Self {
        Self {
            m: NetworkParams::zeros(arch),
            v: NetworkParams::zeros(arch),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }
}

fn congruent<T: Real>(a: &NetworkParams<T>, b: &NetworkParams<T>, what: &str) -> Result<()> {
    let (la, lb) = (a.layout(), b.layout());
    if la != lb {
        return Err(Error::shape(what, format!("{la:?}"), format!("{lb:?}")));
    }
    Ok(())
}

/// One Adam update of `params` in place, with bias correction using the
/// incremented step count.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    lr: f64,
) -> Result<()> {
    congruent(params, grads, "gradients")?;
    congruent(params, &state.m, "adam moments")?;
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Argument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let c1 = T::one() - b1;
    let c2 = T::one() - b2;
    let m_scale = T::from_f64_lossy(1.0 / (1.0 - state.beta1.powi(t)));
    let v_scale = T::from_f64_lossy(1.0 / (1.0 - state.beta2.powi(t)));
    let eps = T::from_f64_lossy(state.epsilon);
    let lr = T::from_f64_lossy(lr);

    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(ms)
        .zip(vs)
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let m_hat = *m * m_scale;
            let v_hat = *v * v_scale;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_CHANNELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    pub seed: u64,
    pub dataset_path: PathBuf,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every_epochs: usize,
    /// Filters in each hidden convolution.
    #[serde(default = "default_hidden")]
    pub hidden_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-5,
            decay_factor: 0.96,
            decay_every_steps: 1000,
            batch_size: 60,
            epochs: 200,
            shuffle: true,
            seed: 0,
            dataset_path: PathBuf::from("train.fcbp"),
            checkpoint_dir: None,
            checkpoint_every_epochs: 0,
            hidden_channels: DEFAULT_HIDDEN_CHANNELS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            bad.push("base_lr > 0");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            bad.push("0 < decay_factor ≤ 1");
        }
        if self.decay_every_steps == 0 {
            bad.push("decay_every_steps ≥ 1");
        }
        if self.batch_size == 0 {
            bad.push("batch_size ≥ 1");
        }
        if self.epochs == 0 {
            bad.push("epochs ≥ 1");
        }
        if self.hidden_channels == 0 {
            bad.push("hidden_channels ≥ 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "train config violates: {}",
                bad.join(", ")
            )))
        }
    }

    /// Staircase decay: `base_lr · decay_factor^⌊step / decay_every_steps⌋`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let exponent = (step / self.decay_every_steps) as i32;
        self.base_lr * self.decay_factor.powi(exponent)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    pub log: Vec<EpochMetrics>,
}

/// Visiting order of dataset items in `epoch` (0-based).
pub fn epoch_order(config: &TrainConfig, n_items: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_items).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
    }
    order
}

/// Trains from `initial` with fresh Adam state.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    initial: NetworkParams<f32>,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let adam = AdamState::new(initial.arch);
    run(config, dataset, initial, adam, on_epoch)
}

/// Continues a run from a checkpoint; the epoch and learning rate resume
/// from the checkpoint's step counter.
pub fn resume(
    config: &TrainConfig,
    dataset: &Dataset,
    checkpoint: Checkpoint<f32>,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    if checkpoint.geometry != dataset.geometry {
        return Err(Error::Config(
            "checkpoint geometry differs from the dataset geometry".into(),
        ));
    }
    run(
        config,
        dataset,
        checkpoint.params,
        checkpoint.adam,
        on_epoch,
    )
}

fn run(
    config: &TrainConfig,
    dataset: &Dataset,
    mut params: NetworkParams<f32>,
    mut adam: AdamState<f32>,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let geom = dataset.geometry;
    let arch = params.arch;
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if arch != Architecture::for_geometry(&geom, arch.hidden_channels) {
        return Err(Error::Config(format!(
            "network expects {} sinogram samples and a {}x{} image; dataset has {} and {}x{}",
            arch.input_len,
            arch.image_rows,
            arch.image_cols,
            geom.sinogram_len(),
            geom.image_rows,
            geom.image_cols
        )));
    }
    if config.batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            dataset.len()
        )));
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let batches = dataset.len() / config.batch_size;
    let start_epoch = (adam.step / batches as u64) as usize;
    let (n_in, n_out) = (arch.input_len, arch.output_len());
    let mut log = Vec::new();
    let started = Instant::now();
    let mut sinos = Vec::with_capacity(config.batch_size * n_in);
    let mut targets = Vec::with_capacity(config.batch_size * n_out);

    for epoch in start_epoch..config.epochs {
        let order = epoch_order(config, dataset.len(), epoch);
        let mut loss_sum = 0.0;
        let mut lr = config.lr_at(adam.step);
        for batch in order.chunks_exact(config.batch_size) {
            sinos.clear();
            targets.clear();
            for &idx in batch {
                sinos.extend_from_slice(&dataset.sinograms[idx]);
                targets.extend_from_slice(&dataset.images[idx].values);
            }
            let (loss, grads) = network_backward(&params, &sinos, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {}",
                    adam.step
                )));
            }
            lr = config.lr_at(adam.step);
            adam_step(&mut adam, &mut params, &grads, lr)?;
            loss_sum += loss as f64;
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics)?;
        log.push(metrics);

        if let Some(dir) = &config.checkpoint_dir {
            let last = epoch + 1 == config.epochs;
            let scheduled = config.checkpoint_every_epochs > 0
                && (epoch + 1) % config.checkpoint_every_epochs == 0;
            if scheduled || last {
                let ckpt = Checkpoint {
                    geometry: geom,
                    params: params.clone(),
                    adam: adam.clone(),
                };
                if scheduled {
                    save_checkpoint(&dir.join(format!("epoch_{:04}.ckpt", epoch + 1)), &ckpt)?;
                }
                if last {
                    save_checkpoint(&dir.join("final.ckpt"), &ckpt)?;
                }
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(TrainOutcome { params, adam, log })
}
