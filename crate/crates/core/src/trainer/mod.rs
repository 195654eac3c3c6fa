//! Imitation training: mean squared action error minimized with Adam over
//! minibatches drawn with replacement from the pooled demonstration frames.

mod data;
mod normalize;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::GraphError;
use crate::policy::PolicyModel;

pub use data::{Dataset, DemoMeta, DemoSource, Demonstration, Frame};
pub use normalize::NormalizationSpec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("no frames in demonstrations marked for training")]
    EmptyDataset,
    #[error("width mismatch: {left} vs {right}")]
    Width { left: usize, right: usize },
    #[error("non-finite gradient at entry {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("policy: {0}")]
    Policy(#[from] GraphError),
    #[error("demonstration format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_batches: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 512,
            total_batches: 800,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.total_batches > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Loss over every pooled frame at the final weights.
    pub final_loss: f64,
    pub wall_time_ms: u64,
    pub config: TrainConfig,
    /// SHA-256 of the final weights as little-endian bytes.
    pub checksum: String,
    pub cancelled: bool,
}

impl TrainReport {
    /// `batch,loss` rows with a header.
    pub fn to_table(&self) -> String {
        let mut s = String::from("batch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

pub fn weight_checksum(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if predicted.len() != target.len() {
        return Err(TrainError::Width { left: predicted.len(), right: target.len() });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / predicted.len() as f64)
}

/// Frame indices for one batch. Stream `batch` of a generator seeded by
/// `config.seed`, so any batch can be regenerated on its own.
pub fn sample_batch(n_frames: usize, config: &TrainConfig, batch: usize) -> Result<Vec<usize>, TrainError> {
    if n_frames == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(batch as u64);
    Ok((0..config.batch_size).map(|_| rng.gen_range(0..n_frames)).collect())
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

pub fn adam_step(
    weights: &mut [f64],
    grad: &[f64],
    frozen: &[bool],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    let n = weights.len();
    if grad.len() != n || frozen.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(TrainError::Width { left: n, right: grad.len() });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { index });
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..n {
        if frozen[i] {
            continue;
        }
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        weights[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Mean squared error and its gradient over the given frames. Per-frame work
/// runs in parallel; the reduction is sequential in frame order.
pub fn batch_loss_grad(
    model: &PolicyModel,
    params: &[f64],
    data: &Dataset,
    indices: &[usize],
    cols: &[Option<usize>],
) -> Result<(f64, Vec<f64>), TrainError> {
    let width = data.action_names.len();
    let denom = (indices.len() * width.max(1)) as f64;
    let parts: Vec<Result<(f64, Vec<f64>), GraphError>> = indices
        .par_iter()
        .map(|&i| model.sample_loss_grad(params, &data.obs[i], &data.actions[i], cols, 1.0 / denom))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for p in parts {
        let (sq, g) = p?;
        loss += sq;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss / denom, grad))
}

pub fn dataset_loss(model: &PolicyModel, data: &Dataset) -> Result<f64, TrainError> {
    let cols = model.columns(&data.action_names);
    let all: Vec<usize> = (0..data.len()).collect();
    let params = model.params().to_vec();
    let width = data.action_names.len().max(1);
    let parts: Vec<Result<f64, GraphError>> = all
        .par_iter()
        .map(|&i| {
            let out = model.raw_with(&params, &data.obs[i], &cols)?;
            Ok(out.iter().zip(&data.actions[i]).map(|(p, t)| (p - t) * (p - t)).sum())
        })
        .collect();
    let mut s = 0.0;
    for p in parts {
        s += p?;
    }
    Ok(s / (data.len() * width) as f64)
}

pub fn train(model: &mut PolicyModel, data: &Dataset, config: &TrainConfig) -> Result<TrainReport, TrainError> {
    train_with(model, data, config, |_, _| true)
}

/// Like [`train`], calling `on_batch(index, loss)` after every step. Returning
/// false stops early and marks the report cancelled.
pub fn train_with(
    model: &mut PolicyModel,
    data: &Dataset,
    config: &TrainConfig,
    mut on_batch: impl FnMut(usize, f64) -> bool,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let start = Instant::now();
    let cols = model.columns(&data.action_names);
    let frozen = model.frozen();
    let mut params = model.params().to_vec();
    let mut state = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(config.total_batches);
    let mut cancelled = false;
    for b in 0..config.total_batches {
        let idx = sample_batch(data.len(), config, b)?;
        let (loss, grad) = batch_loss_grad(model, &params, data, &idx, &cols)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { batch: b });
        }
        adam_step(&mut params, &grad, &frozen, &mut state, config)?;
        losses.push(loss);
        if !on_batch(b, loss) {
            cancelled = true;
            break;
        }
    }
    model.set_params(params);
    let final_loss = dataset_loss(model, data)?;
    Ok(TrainReport {
        losses,
        final_loss,
        wall_time_ms: start.elapsed().as_millis() as u64,
        config: config.clone(),
        checksum: weight_checksum(model.params()),
        cancelled,
    })
}

/// Exponential moving average of a loss curve.
pub fn smoothed(losses: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(losses.len());
    let mut s = match losses.first() {
        Some(&l) => l,
        None => return out,
    };
    for &l in losses {
        s = alpha * l + (1.0 - alpha) * s;
        out.push(s);
    }
    out
}
