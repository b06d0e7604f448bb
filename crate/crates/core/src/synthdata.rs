//! Seeded synthetic multi-label datasets.
//!
//! Each label `l` owns a fixed unit direction `u_l` in feature space (the
//! directions are mutually orthonormal). A sample with label vector `y` has
//! features `Σ_l y_l · class_sep · u_l + noise`, so every label is linearly
//! recoverable when `class_sep > 0`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, Matrix};
use crate::rng::{fill_standard_normal, substream, TAG_SYNTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub n_labels: usize,
    pub class_sep: f64,
    pub noise_std: f64,
    pub label_prevalence: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if self.n_labels == 0 {
            return Err(Error::Config("n_labels must be at least 1".into()));
        }
        if self.feature_dim < self.n_labels {
            return Err(Error::Config(format!(
                "feature_dim {} is smaller than n_labels {}",
                self.feature_dim, self.n_labels
            )));
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return Err(Error::Config(format!("class_sep must be >= 0, got {}", self.class_sep)));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be > 0, got {}", self.noise_std)));
        }
        if self.label_prevalence.len() != self.n_labels {
            return Err(Error::Config(format!(
                "expected {} prevalences, got {}",
                self.n_labels,
                self.label_prevalence.len()
            )));
        }
        for (l, &p) in self.label_prevalence.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "prevalence of label {l} must lie strictly inside (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.n_samples * 4 / 5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: LabelMatrix,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Matrix, labels: LabelMatrix, split: Split) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::shape("dataset rows", features.rows(), labels.rows()));
        }
        if !features.all_finite() {
            return Err(Error::Input("dataset features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            split: self.split,
        }
    }
}

/// Orthonormal label directions, one per row of the returned `L×p` matrix.
pub fn label_directions(cfg: &SynthConfig) -> Matrix {
    let p = cfg.feature_dim;
    let mut rng = substream(cfg.seed, TAG_SYNTH, 0);
    let mut dirs = Matrix::zeros(cfg.n_labels, p);
    for l in 0..cfg.n_labels {
        let mut v = vec![0.0; p];
        fill_standard_normal(&mut rng, &mut v);
        // Modified Gram-Schmidt, two passes.
        for _ in 0..2 {
            for k in 0..l {
                let u = dirs.row(k);
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
        }
        let norm = crate::matrix::l2_norm(&v);
        for (dst, vi) in dirs.row_mut(l).iter_mut().zip(&v) {
            *dst = vi / norm;
        }
    }
    dirs
}

/// Generates the train and test splits (80/20) for `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let p = cfg.feature_dim;
    let l_count = cfg.n_labels;
    let dirs = label_directions(cfg);

    let mut label_rng = substream(cfg.seed, TAG_SYNTH, 1);
    let mut labels = Vec::with_capacity(n * l_count);
    for _ in 0..n {
        for &prev in &cfg.label_prevalence {
            labels.push(u8::from(label_rng.random::<f64>() < prev));
        }
    }

    let mut noise_rng = substream(cfg.seed, TAG_SYNTH, 2);
    let mut features = vec![0.0; n * p];
    fill_standard_normal(&mut noise_rng, &mut features);
    for i in 0..n {
        let row = &mut features[i * p..(i + 1) * p];
        for v in row.iter_mut() {
            *v *= cfg.noise_std;
        }
        for l in 0..l_count {
            if labels[i * l_count + l] == 1 {
                for (v, u) in row.iter_mut().zip(dirs.row(l)) {
                    *v += cfg.class_sep * u;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, TAG_SYNTH, 3));
    let n_train = cfg.n_train();
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let all = Dataset::new(
        Matrix::new(n, p, features)?,
        LabelMatrix::new(n, l_count, labels)?,
        Split::Train,
    )?;
    let train = all.subset(&train_idx);
    let mut test = all.subset(&test_idx);
    test.split = Split::Test;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cfg(n: usize, prevalence: f64, sep: f64) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            feature_dim: 8,
            n_labels: 2,
            class_sep: sep,
            noise_std: 1.0,
            label_prevalence: vec![prevalence; 2],
            seed: 11,
        }
    }

    #[test]
    fn deterministic() {
        let c = cfg(200, 0.3, 2.0);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
    }

    #[test]
    fn split_sizes_and_tags() {
        let (tr, te) = generate(&cfg(1000, 0.3, 2.0)).unwrap();
        assert_eq!(tr.len(), 800);
        assert_eq!(te.len(), 200);
        assert_eq!(tr.split, Split::Train);
        assert_eq!(te.split, Split::Test);
    }

    #[test]
    fn directions_orthonormal() {
        let c = SynthConfig {
            n_labels: 5,
            feature_dim: 12,
            label_prevalence: vec![0.5; 5],
            ..cfg(10, 0.5, 1.0)
        };
        let d = label_directions(&c);
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = d.row(a).iter().zip(d.row(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prevalence_within_binomial_band() {
        let (tr, te) = generate(&cfg(10_000, 0.3, 1.0)).unwrap();
        for l in 0..2 {
            let pos = tr.labels.column(l).iter().chain(te.labels.column(l).iter()).filter(|&&v| v == 1).count();
            let freq = pos as f64 / 10_000.0;
            assert!((0.27..=0.33).contains(&freq), "label {l} freq {freq}");
            assert!((freq - 0.3).abs() <= 4.0 * (0.3f64 * 0.7 / 10_000.0).sqrt());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = cfg(100, 0.3, 1.0);
        c.label_prevalence[1] = 1.0;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
        let mut c = cfg(100, 0.3, 1.0);
        c.feature_dim = 1;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
        let mut c = cfg(1, 0.3, 1.0);
        c.n_samples = 1;
        assert!(generate(&c).is_err());
    }
}
