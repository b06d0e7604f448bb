//! DP-SGD (per-sample clipping, Gaussian noise, Poisson subsampling) and the
//! non-private minibatch baseline.
//!
//! The private update is `g̃ = (Σ_i clip(g_i) + ξ) / B_exp` with
//! `ξ ~ N(0, σ²C²I)` and `B_exp = q·N`, i.e. noise is added to the clipped
//! sum (sensitivity C) and the result is divided by the expected batch size.
//! Per-sample work fans out to the rayon pool; reductions run over fixed-size
//! chunks in ascending index order so results do not depend on thread count.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant;
use crate::error::{Error, Result};
use crate::model::{loss_and_gradient, GradientVector, LabelWeights, Params};
use crate::rng::{fill_standard_normal, substream, TAG_NOISE, TAG_POISSON, TAG_SHUFFLE};
use crate::synthdata::Dataset;

const REDUCE_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// `None` means no target (ε = ∞ or σ given directly).
    pub epsilon_target: Option<f64>,
    pub delta: f64,
    pub clip_norm: f64,
    pub sample_rate: f64,
    pub steps: u64,
    pub noise_multiplier: Option<f64>,
}

impl PrivacySpec {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if let Some(e) = self.epsilon_target {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Specification(format!("epsilon target must be finite and > 0, got {e}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Specification(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Specification(format!("clip norm must be > 0, got {}", self.clip_norm)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Specification(format!(
                "sample rate must lie in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.sample_rate * (n_train as f64) < 1.0 {
            return Err(Error::Specification(format!(
                "expected batch q*N = {} is below 1",
                self.sample_rate * n_train as f64
            )));
        }
        if let Some(s) = self.noise_multiplier {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Specification(format!("noise multiplier must be > 0, got {s}")));
            }
        }
        if self.delta >= 1.0 / n_train as f64 {
            log::warn!("delta {} is not below 1/N_train = {}", self.delta, 1.0 / n_train as f64);
        }
        Ok(())
    }

    /// Calibrates σ from the ε target when σ is not already set.
    pub fn resolve(&mut self) -> Result<f64> {
        if let Some(s) = self.noise_multiplier {
            return Ok(s);
        }
        let target = self.epsilon_target.ok_or_else(|| {
            Error::Specification("neither noise multiplier nor epsilon target given".into())
        })?;
        let sigma = accountant::calibrate_sigma(target, self.delta, self.sample_rate, self.steps)?;
        self.noise_multiplier = Some(sigma);
        Ok(sigma)
    }

    pub fn sigma(&self) -> Result<f64> {
        self.noise_multiplier
            .ok_or_else(|| Error::Specification("noise multiplier not resolved".into()))
    }

    pub fn expected_batch(&self, n_train: usize) -> f64 {
        self.sample_rate * n_train as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub weights: LabelWeights,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Privacy actually consumed by a private run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpent {
    pub epsilon: f64,
    pub delta: f64,
    pub best_order: f64,
}

/// Per-step instrumentation.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub step: u64,
    pub batch: Vec<usize>,
    pub pre_clip_norms: Vec<f64>,
    pub post_clip_norms: Vec<f64>,
    pub loss_sum: f64,
}

/// Momentum buffer shared by both trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(n_params: usize) -> Self {
        Self {
            velocity: vec![0.0; n_params],
        }
    }

    /// `v ← m·v + g`, `θ ← θ − η·v`.
    pub fn apply(&mut self, params: &mut Params, grad: &[f64], lr: f64, momentum: f64) {
        for ((theta, v), g) in params.as_mut_slice().iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = momentum * *v + g;
            *theta -= lr * *v;
        }
    }
}

/// `g · min(1, C/‖g‖)`; vectors inside the ball come back untouched.
pub fn clip(g: GradientVector, clip_norm: f64) -> GradientVector {
    let norm = g.norm();
    if norm <= clip_norm {
        return g;
    }
    let scale = clip_norm / norm;
    GradientVector(g.0.into_iter().map(|v| v * scale).collect())
}

/// Poisson subsample of `0..n`: each index independently with probability `q`.
pub fn poisson_sample(n: usize, q: f64, step_index: u64, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, TAG_POISSON, step_index);
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

struct ChunkSum {
    grad: Vec<f64>,
    loss: f64,
    pre: Vec<f64>,
    post: Vec<f64>,
}

/// Per-sample gradients over `indices`, optionally clipped, summed in index order.
fn summed_gradients(
    params: &Params,
    data: &Dataset,
    indices: &[usize],
    weights: &LabelWeights,
    clip_norm: Option<f64>,
) -> Result<ChunkSum> {
    let n_params = params.len();
    let chunks: Vec<ChunkSum> = indices
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = ChunkSum {
                grad: vec![0.0; n_params],
                loss: 0.0,
                pre: Vec::with_capacity(chunk.len()),
                post: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let (loss, g) = loss_and_gradient(params, data.features.row(i), data.labels.row(i), weights)?;
                let g = match clip_norm {
                    Some(c) => {
                        acc.pre.push(g.norm());
                        let g = clip(g, c);
                        acc.post.push(g.norm());
                        g
                    }
                    None => g,
                };
                for (a, v) in acc.grad.iter_mut().zip(&g.0) {
                    *a += v;
                }
                acc.loss += loss;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = ChunkSum {
        grad: vec![0.0; n_params],
        loss: 0.0,
        pre: Vec::with_capacity(indices.len()),
        post: Vec::with_capacity(indices.len()),
    };
    for c in chunks {
        for (a, v) in total.grad.iter_mut().zip(&c.grad) {
            *a += v;
        }
        total.loss += c.loss;
        total.pre.extend(c.pre);
        total.post.extend(c.post);
    }
    Ok(total)
}

fn check_finite(params: &Params, loss: f64, step: u64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step: step as usize,
            reason: format!("loss is {loss}"),
        });
    }
    if !params.all_finite() {
        return Err(Error::Divergence {
            step: step as usize,
            reason: "non-finite parameters".into(),
        });
    }
    Ok(())
}

/// One DP-SGD step over the already-sampled `indices`.
///
/// An empty batch still draws the noise vector and moves the parameters.
#[allow(clippy::too_many_arguments)]
pub fn dp_step(
    params: &mut Params,
    momentum: &mut Momentum,
    data: &Dataset,
    indices: &[usize],
    spec: &PrivacySpec,
    cfg: &TrainConfig,
    step_index: u64,
) -> Result<StepReport> {
    let sigma = spec.sigma()?;
    let sums = summed_gradients(params, data, indices, &cfg.weights, Some(spec.clip_norm))?;

    let mut noise = vec![0.0; params.len()];
    fill_standard_normal(&mut substream(cfg.seed, TAG_NOISE, step_index), &mut noise);
    let noise_std = sigma * spec.clip_norm;
    let b_exp = spec.expected_batch(data.len());
    let noisy: Vec<f64> = sums
        .grad
        .iter()
        .zip(&noise)
        .map(|(g, z)| (g + noise_std * z) / b_exp)
        .collect();
    momentum.apply(params, &noisy, cfg.learning_rate, cfg.momentum);
    check_finite(params, sums.loss, step_index)?;
    Ok(StepReport {
        step: step_index,
        batch: indices.to_vec(),
        pre_clip_norms: sums.pre,
        post_clip_norms: sums.post,
        loss_sum: sums.loss,
    })
}

/// Runs `spec.steps` DP-SGD steps from `init`; `observer` sees every step.
pub fn train_private_observed(
    data: &Dataset,
    init: &Params,
    spec: &PrivacySpec,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepReport),
) -> Result<(Params, PrivacySpent)> {
    spec.validate(data.len())?;
    cfg.validate()?;
    let sigma = spec.sigma()?;
    let mut params = init.clone();
    let mut momentum = Momentum::new(params.len());
    for step in 0..spec.steps {
        let batch = poisson_sample(data.len(), spec.sample_rate, step, cfg.seed);
        let report = dp_step(&mut params, &mut momentum, data, &batch, spec, cfg, step)?;
        observer(&report);
    }
    let (epsilon, best_order) = accountant::epsilon(spec.sample_rate, sigma, spec.steps, spec.delta)?;
    if let Some(target) = spec.epsilon_target {
        if epsilon > target + accountant::CALIBRATION_TOL {
            return Err(Error::Specification(format!(
                "consumed epsilon {epsilon} exceeds target {target}"
            )));
        }
    }
    Ok((
        params,
        PrivacySpent {
            epsilon,
            delta: spec.delta,
            best_order,
        },
    ))
}

pub fn train_private(
    data: &Dataset,
    init: &Params,
    spec: &PrivacySpec,
    cfg: &TrainConfig,
) -> Result<(Params, PrivacySpent)> {
    train_private_observed(data, init, spec, cfg, &mut |_| {})
}

/// Shuffled minibatch SGD with momentum: no clipping, no noise.
///
/// Each epoch is a fresh permutation; a trailing partial batch is dropped.
pub fn train_nonprivate(
    data: &Dataset,
    init: &Params,
    cfg: &TrainConfig,
    batch_size: usize,
    steps: u64,
) -> Result<Params> {
    cfg.validate()?;
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size must lie in [1, {}], got {batch_size}",
            data.len()
        )));
    }
    let mut params = init.clone();
    let mut momentum = Momentum::new(params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = data.len() / batch_size;
    let mut epoch = u64::MAX;
    for step in 0..steps {
        let e = step / per_epoch as u64;
        if e != epoch {
            epoch = e;
            order = (0..data.len()).collect();
            order.shuffle(&mut substream(cfg.seed, TAG_SHUFFLE, epoch));
        }
        let start = (step % per_epoch as u64) as usize * batch_size;
        let batch = &order[start..start + batch_size];
        let sums = summed_gradients(&params, data, batch, &cfg.weights, None)?;
        let mean: Vec<f64> = sums.grad.iter().map(|g| g / batch_size as f64).collect();
        momentum.apply(&mut params, &mean, cfg.learning_rate, cfg.momentum);
        check_finite(&params, sums.loss, step)?;
    }
    Ok(params)
}
