#![allow(dead_code)]

use dprgmi::geometry::EmbeddingMatrix;
use dprgmi::matrix::Matrix;
use dprgmi::model::{init_params, ModelConfig, Params};
use dprgmi::synthdata::{generate, Dataset, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn gaussian_embeddings(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(gaussian_matrix(rng, rows, cols)).unwrap()
}

pub fn small_synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_samples: n,
        feature_dim: 8,
        n_labels: 3,
        class_sep: 2.0,
        noise_std: 1.0,
        label_prevalence: vec![0.3, 0.3, 0.4],
        seed,
    }
}

pub fn small_data(n: usize, seed: u64) -> (Dataset, Dataset) {
    generate(&small_synth(n, seed)).unwrap()
}

pub fn small_model(ds: &Dataset) -> ModelConfig {
    ModelConfig {
        input_dim: ds.feature_dim(),
        hidden_dim: 12,
        embed_dim: 4,
        n_labels: ds.n_labels(),
    }
}

pub fn random_params(cfg: ModelConfig, seed: u64) -> Params {
    init_params(cfg, seed).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
