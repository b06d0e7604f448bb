//! The end-to-end diagnostic sweep.
//!
//! For every (branch, seed, ε): train from the branch's shared φ₀ (DP-SGD
//! for finite ε, plain SGD for ε = ∞), score the test split end to end,
//! embed the test split under φ_ε and φ₀, measure Δ and d_eff, fit a probe
//! on frozen training embeddings, and bootstrap all five statistics over
//! one shared set of test resamples.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::accountant;
use crate::checkpoint::read_checkpoint;
use crate::dp_optimizer::{train_nonprivate, train_private, PrivacySpec, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{macro_auroc, probe_predict, train_probe, MacroAuroc};
use crate::geometry::{covariance_summary, displacement, EmbeddingMatrix};
use crate::matrix::{LabelMatrix, Matrix};
use crate::model::{embed_batch, init_params, logits_batch, pos_weights, LabelWeights, ModelConfig, Params};
use crate::stats::paired_bootstrap;
use crate::synthdata::{generate, Dataset, Split};
use crate::workflow::config::{Branch, DataSource, InitSource, PretrainSettings, PrivacyTarget, SweepConfig};
use crate::workflow::io::read_dataset;
use crate::workflow::report::{
    DiagnosticProfile, DiagnosticRecord, Provenance, RecordFailure, RecordOutcome, REPORT_FORMAT,
    REPORT_VERSION,
};

pub fn load_data(source: &DataSource) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Synth(cfg) => generate(cfg),
        DataSource::Files { train, test } => {
            let tr = read_dataset(train)?;
            let te = read_dataset(test)?;
            if tr.split != Split::Train || te.split != Split::Test {
                return Err(Error::Config("train/test files carry the wrong split tags".into()));
            }
            if tr.feature_dim() != te.feature_dim() || tr.n_labels() != te.n_labels() {
                return Err(Error::shape(
                    "train/test dimensions",
                    format!("p={}, L={}", tr.feature_dim(), tr.n_labels()),
                    format!("p={}, L={}", te.feature_dim(), te.n_labels()),
                ));
            }
            Ok((tr, te))
        }
    }
}

/// Non-private training on the source task from a fresh seeded init.
pub fn pretrain(
    source: &Dataset,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    batch_size: usize,
    steps: u64,
) -> Result<Params> {
    if source.feature_dim() != model_cfg.input_dim || source.n_labels() != model_cfg.n_labels {
        return Err(Error::shape(
            "pretrain source",
            format!("p={}, L={}", model_cfg.input_dim, model_cfg.n_labels),
            format!("p={}, L={}", source.feature_dim(), source.n_labels()),
        ));
    }
    let init = init_params(model_cfg, train_cfg.seed)?;
    train_nonprivate(source, &init, train_cfg, batch_size, steps)
}

fn branch_init(
    branch: &Branch,
    cfg: &SweepConfig,
    model_cfg: ModelConfig,
    seed: u64,
) -> Result<Params> {
    match &branch.init {
        InitSource::Random => init_params(model_cfg, seed),
        InitSource::Checkpoint { path } => {
            let p = read_checkpoint(path)?;
            if *p.config() != model_cfg {
                return Err(Error::shape("checkpoint model", format!("{model_cfg:?}"), format!("{:?}", p.config())));
            }
            Ok(p)
        }
        InitSource::Pretrain(PretrainSettings {
            source,
            steps,
            batch_size,
            learning_rate,
            seed_offset,
        }) => {
            let (src_train, _) = load_data(source)?;
            let weights = pos_weights(&src_train.labels)?;
            let train_cfg = TrainConfig {
                learning_rate: learning_rate.unwrap_or(cfg.optimizer.learning_rate),
                momentum: cfg.optimizer.momentum,
                seed: seed.wrapping_add(*seed_offset),
                weights,
            };
            pretrain(&src_train, model_cfg, &train_cfg, *batch_size, *steps)
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, (&'static str, Error)> {
    r.map_err(|e| (name, e))
}

struct RecordInputs<'a> {
    cfg: &'a SweepConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    weights: &'a LabelWeights,
    phi0: &'a Params,
    z0_test: &'a EmbeddingMatrix,
    sample_rate: f64,
    sigma: Option<f64>,
    config_hash: &'a str,
}

fn run_record(
    input: &RecordInputs<'_>,
    branch: &Branch,
    seed: u64,
    target: PrivacyTarget,
) -> std::result::Result<DiagnosticRecord, (&'static str, Error)> {
    let cfg = input.cfg;
    let train_cfg = TrainConfig {
        learning_rate: cfg.optimizer.learning_rate,
        momentum: cfg.optimizer.momentum,
        seed,
        weights: input.weights.clone(),
    };
    let steps = cfg.privacy.steps;
    let n_train = input.train.len();

    let (params, spent, sigma) = match target {
        PrivacyTarget::NonPrivate => {
            let batch = (input.sample_rate * n_train as f64).floor() as usize;
            let p = stage("train", train_nonprivate(input.train, input.phi0, &train_cfg, batch, steps))?;
            (p, None, None)
        }
        PrivacyTarget::Epsilon(eps) => {
            let sigma = input
                .sigma
                .ok_or_else(|| ("calibrate", Error::Specification(format!("no sigma for epsilon {eps}"))))?;
            let spec = PrivacySpec {
                epsilon_target: Some(eps),
                delta: cfg.privacy.delta,
                clip_norm: cfg.privacy.clip_norm,
                sample_rate: input.sample_rate,
                steps,
                noise_multiplier: Some(sigma),
            };
            let (p, spent) = stage("train", train_private(input.train, input.phi0, &spec, &train_cfg))?;
            (p, Some(spent.epsilon), Some(sigma))
        }
    };

    let logits = stage("evaluate", logits_batch(&params, &input.test.features))?;
    let z_eps = stage("embed", embed_batch(&params, &input.test.features))?;
    let z_train = stage("embed", embed_batch(&params, &input.train.features))?;
    let probe = stage(
        "probe",
        train_probe(&z_train, &input.train.labels, cfg.probe.lambda, input.weights),
    )?;
    let probe_scores = stage("probe", probe_predict(&probe, &z_eps))?;

    let statistic = |idx: &[usize]| -> Option<Vec<f64>> {
        record_statistics(idx, &logits, &probe_scores, &input.test.labels, &z_eps, input.z0_test).ok()
    };
    // Point statistics first so a degenerate full sample is reported by stage.
    let identity: Vec<usize> = (0..input.test.len()).collect();
    stage(
        "geometry",
        record_statistics(&identity, &logits, &probe_scores, &input.test.labels, &z_eps, input.z0_test),
    )?;
    let boot = stage(
        "bootstrap",
        paired_bootstrap(input.test.len(), cfg.bootstrap.resamples, seed, statistic),
    )?;

    Ok(DiagnosticRecord {
        branch: branch.name.clone(),
        dataset: cfg.dataset_id.clone(),
        seed,
        epsilon_target: target,
        epsilon_consumed: spent,
        delta: cfg.privacy.delta,
        sigma,
        private_regime: matches!(target, PrivacyTarget::Epsilon(e) if e < 10.0),
        u_end2end: boot[0],
        u_probe: boot[1],
        gap: boot[2],
        displacement: boot[3],
        d_eff: boot[4],
        probe_lambda: cfg.probe.lambda,
        probe_converged: probe.fits.iter().all(|f| f.converged || f.skipped),
        config_hash: input.config_hash.to_string(),
    })
}

/// `[U_end2end, U_probe, G, Δ, d_eff]` on the test rows `idx`.
pub fn record_statistics(
    idx: &[usize],
    logits: &Matrix,
    probe_scores: &Matrix,
    labels: &LabelMatrix,
    z_eps: &EmbeddingMatrix,
    z_0: &EmbeddingMatrix,
) -> Result<Vec<f64>> {
    let y = labels.select_rows(idx);
    let e2e: MacroAuroc = macro_auroc(&logits.select_rows(idx), &y)?;
    let probe = macro_auroc(&probe_scores.select_rows(idx), &y)?;
    let ze = z_eps.select_rows(idx)?;
    let delta = displacement(&ze, &z_0.select_rows(idx)?)?;
    let d_eff = covariance_summary(&ze)?
        .d_eff
        .ok_or_else(|| Error::DegenerateGeometry("zero covariance".into()))?;
    Ok(vec![e2e.value, probe.value, probe.value - e2e.value, delta, d_eff])
}

fn failure(cfg: &SweepConfig, branch: &Branch, seed: u64, target: PrivacyTarget, stage: &str, e: &Error) -> RecordOutcome {
    log::warn!("record {}/{seed}/{target} failed at {stage}: {e}", branch.name);
    RecordOutcome::Failed(RecordFailure {
        branch: branch.name.clone(),
        dataset: cfg.dataset_id.clone(),
        seed,
        epsilon_target: target,
        stage: stage.to_string(),
        message: e.to_string(),
        exit_code: e.exit_code(),
    })
}

/// Runs the full sweep. Records are ordered branch → seed → ε as declared.
pub fn run_sweep(cfg: &SweepConfig) -> Result<DiagnosticProfile> {
    run_sweep_with_timestamp(cfg, None)
}

pub fn run_sweep_with_timestamp(cfg: &SweepConfig, timestamp: Option<String>) -> Result<DiagnosticProfile> {
    cfg.validate()?;
    let (train, test) = load_data(&cfg.data)?;
    let model_cfg = ModelConfig {
        input_dim: train.feature_dim(),
        hidden_dim: cfg.model.hidden_dim,
        embed_dim: cfg.model.embed_dim,
        n_labels: train.n_labels(),
    };
    model_cfg.validate()?;
    let weights = pos_weights(&train.labels)?;
    let sample_rate = cfg.privacy.sample_rate_for(train.len())?;
    let config_hash = cfg.hash();

    // σ per finite target, shared by every branch and seed.
    let mut sigmas: BTreeMap<u64, Result<f64>> = BTreeMap::new();
    for t in &cfg.privacy.targets {
        if let PrivacyTarget::Epsilon(e) = t {
            sigmas.entry(e.to_bits()).or_insert_with(|| {
                let spec = PrivacySpec {
                    epsilon_target: Some(*e),
                    delta: cfg.privacy.delta,
                    clip_norm: cfg.privacy.clip_norm,
                    sample_rate,
                    steps: cfg.privacy.steps,
                    noise_multiplier: None,
                };
                spec.validate(train.len())?;
                let sigma = accountant::calibrate_sigma(*e, cfg.privacy.delta, sample_rate, cfg.privacy.steps)?;
                log::info!("epsilon {e}: sigma {sigma:.6}");
                Ok(sigma)
            });
        }
    }

    let init_jobs: Vec<(usize, u64)> = (0..cfg.branches.len())
        .flat_map(|b| cfg.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let inits: Vec<Result<(Params, EmbeddingMatrix)>> = init_jobs
        .par_iter()
        .map(|&(b, seed)| {
            let phi0 = branch_init(&cfg.branches[b], cfg, model_cfg, seed)?;
            let z0 = embed_batch(&phi0, &test.features)?;
            Ok((phi0, z0))
        })
        .collect();

    let jobs: Vec<(usize, PrivacyTarget)> = (0..init_jobs.len())
        .flat_map(|k| cfg.privacy.targets.iter().map(move |&t| (k, t)))
        .collect();
    let records: Vec<RecordOutcome> = jobs
        .par_iter()
        .map(|&(k, target)| {
            let (b, seed) = init_jobs[k];
            let branch = &cfg.branches[b];
            let (phi0, z0) = match &inits[k] {
                Ok(v) => v,
                Err(e) => return failure(cfg, branch, seed, target, "init", e),
            };
            let sigma = match target {
                PrivacyTarget::NonPrivate => None,
                PrivacyTarget::Epsilon(e) => match &sigmas[&e.to_bits()] {
                    Ok(s) => Some(*s),
                    Err(err) => return failure(cfg, branch, seed, target, "calibrate", err),
                },
            };
            let input = RecordInputs {
                cfg,
                train: &train,
                test: &test,
                weights: &weights,
                phi0,
                z0_test: z0,
                sample_rate,
                sigma,
                config_hash: &config_hash,
            };
            match run_record(&input, branch, seed, target) {
                Ok(r) => {
                    log::info!(
                        "{}/{seed}/{target}: end-to-end {:.4}, probe {:.4}, d_eff {:.3}",
                        branch.name,
                        r.u_end2end.point,
                        r.u_probe.point,
                        r.d_eff.point
                    );
                    RecordOutcome::Ok(r)
                }
                Err((stage, e)) => failure(cfg, branch, seed, target, stage, &e),
            }
        })
        .collect();

    Ok(DiagnosticProfile {
        provenance: Provenance {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
            master_seeds: cfg.seeds.clone(),
            config_hash,
        },
        config: cfg.clone(),
        records,
    })
}
