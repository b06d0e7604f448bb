//! Two-layer tanh encoder with a linear multi-label head.
//!
//! `embedding = W2·tanh(W1·x + b1) + b2`, `logits = Wh·embedding + bh`.
//! Parameters live in one flat buffer (order W1, b1, W2, b2, Wh, bh, each
//! row-major) so optimizers can treat them as a single vector.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;
use crate::matrix::{l2_norm, LabelMatrix, Matrix};
use crate::rng::{substream, TAG_INIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    pub n_labels: usize,
}

fn default_hidden() -> usize {
    64
}

fn default_embed() -> usize {
    16
}

impl ModelConfig {
    pub fn new(input_dim: usize, n_labels: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: default_hidden(),
            embed_dim: default_embed(),
            n_labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.n_labels == 0 {
            return Err(Error::Config(format!("model dimensions must all be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let (p, h, d, l) = (self.input_dim, self.hidden_dim, self.embed_dim, self.n_labels);
        let w1 = 0;
        let b1 = w1 + h * p;
        let w2 = b1 + h;
        let b2 = w2 + d * h;
        let wh = b2 + d;
        let bh = wh + l * d;
        Layout {
            w1,
            b1,
            w2,
            b2,
            wh,
            bh,
            total: bh + l,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub wh: usize,
    pub bh: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    cfg: ModelConfig,
    data: Vec<f64>,
}

macro_rules! tensor_views {
    ($($name:ident, $name_mut:ident, $start:ident, $end:ident;)*) => {
        $(
            pub fn $name(&self) -> &[f64] {
                let l = self.cfg.layout();
                &self.data[l.$start..l.$end]
            }

            pub fn $name_mut(&mut self) -> &mut [f64] {
                let l = self.cfg.layout();
                &mut self.data[l.$start..l.$end]
            }
        )*
    };
}

impl Params {
    pub fn zeros(cfg: ModelConfig) -> Self {
        Self {
            cfg,
            data: vec![0.0; cfg.n_params()],
        }
    }

    pub fn from_flat(cfg: ModelConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if data.len() != cfg.n_params() {
            return Err(Error::shape("params", cfg.n_params(), data.len()));
        }
        Ok(Self { cfg, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    tensor_views! {
        w1, w1_mut, w1, b1;
        b1, b1_mut, b1, w2;
        w2, w2_mut, w2, b2;
        b2, b2_mut, b2, wh;
        wh, wh_mut, wh, bh;
        bh, bh_mut, bh, total;
    }

    /// Named tensors with their shapes, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let c = &self.cfg;
        vec![
            ("W1", vec![c.hidden_dim, c.input_dim], self.w1()),
            ("b1", vec![c.hidden_dim], self.b1()),
            ("W2", vec![c.embed_dim, c.hidden_dim], self.w2()),
            ("b2", vec![c.embed_dim], self.b2()),
            ("Wh", vec![c.n_labels, c.embed_dim], self.wh()),
            ("bh", vec![c.n_labels], self.bh()),
        ]
    }
}

/// Gradient with the same flat layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradientVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Positive-class weight per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights(pub Vec<f64>);

impl LabelWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((l, v)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Input(format!("label weight {l} must be positive, got {v}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n_labels: usize) -> Self {
        Self(vec![1.0; n_labels])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn init_params(cfg: ModelConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut params = Params::zeros(cfg);
    let mut rng = substream(seed, TAG_INIT, 0);
    let fill = |buf: &mut [f64], fan_in: usize, rng: &mut crate::rng::StreamRng| {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in buf {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * scale;
        }
    };
    fill(params.w1_mut(), cfg.input_dim, &mut rng);
    fill(params.w2_mut(), cfg.hidden_dim, &mut rng);
    fill(params.wh_mut(), cfg.embed_dim, &mut rng);
    Ok(params)
}

struct Activations {
    hidden: Vec<f64>,
    embedding: Vec<f64>,
    logits: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, &bias)| {
        let row = &w[r * cols..(r + 1) * cols];
        bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

fn activations(params: &Params, x: &[f64]) -> Activations {
    let mut hidden = Vec::new();
    affine(params.w1(), params.b1(), x, &mut hidden);
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    let mut embedding = Vec::new();
    affine(params.w2(), params.b2(), &hidden, &mut embedding);
    let mut logits = Vec::new();
    affine(params.wh(), params.bh(), &embedding, &mut logits);
    Activations {
        hidden,
        embedding,
        logits,
    }
}

fn check_input(params: &Params, x: &[f64]) -> Result<()> {
    if x.len() != params.cfg.input_dim {
        return Err(Error::shape("model input", params.cfg.input_dim, x.len()));
    }
    Ok(())
}

/// Returns `(embedding, logits)` for one input.
pub fn forward(params: &Params, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(params, x)?;
    let a = activations(params, x);
    Ok((a.embedding, a.logits))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_labels(y: &[u8], n_labels: usize, weights: &LabelWeights) -> Result<()> {
    if y.len() != n_labels {
        return Err(Error::shape("labels", n_labels, y.len()));
    }
    if weights.len() != n_labels {
        return Err(Error::shape("label weights", n_labels, weights.len()));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Input(format!("label value {v} is not binary")));
    }
    Ok(())
}

/// Positive-weighted sigmoid cross-entropy summed over labels.
pub fn sample_loss(logits: &[f64], y: &[u8], weights: &LabelWeights) -> Result<f64> {
    check_labels(y, logits.len(), weights)?;
    Ok(logits
        .iter()
        .zip(y)
        .zip(&weights.0)
        .map(|((&z, &yl), &w)| {
            if yl == 1 {
                w * softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum())
}

/// Loss and its gradient with respect to every parameter for one sample.
pub fn loss_and_gradient(
    params: &Params,
    x: &[f64],
    y: &[u8],
    weights: &LabelWeights,
) -> Result<(f64, GradientVector)> {
    check_input(params, x)?;
    check_labels(y, params.cfg.n_labels, weights)?;
    let cfg = params.cfg;
    let lay = cfg.layout();
    let act = activations(params, x);
    let loss = sample_loss(&act.logits, y, weights)?;

    let mut g = vec![0.0; lay.total];
    let d_logits: Vec<f64> = act
        .logits
        .iter()
        .zip(y)
        .zip(&weights.0)
        .map(|((&z, &yl), &w)| if yl == 1 { -w * sigmoid(-z) } else { sigmoid(z) })
        .collect();

    let d = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let p = cfg.input_dim;
    let wh = params.wh();
    let mut d_emb = vec![0.0; d];
    for (l, &dz) in d_logits.iter().enumerate() {
        let grow = &mut g[lay.wh + l * d..lay.wh + (l + 1) * d];
        for (gv, &e) in grow.iter_mut().zip(&act.embedding) {
            *gv = dz * e;
        }
        g[lay.bh + l] = dz;
        for (de, &w) in d_emb.iter_mut().zip(&wh[l * d..(l + 1) * d]) {
            *de += w * dz;
        }
    }

    let w2 = params.w2();
    let mut d_hidden = vec![0.0; h];
    for (j, &de) in d_emb.iter().enumerate() {
        let grow = &mut g[lay.w2 + j * h..lay.w2 + (j + 1) * h];
        for (gv, &a) in grow.iter_mut().zip(&act.hidden) {
            *gv = de * a;
        }
        g[lay.b2 + j] = de;
        for (dh, &w) in d_hidden.iter_mut().zip(&w2[j * h..(j + 1) * h]) {
            *dh += w * de;
        }
    }

    for (k, (&dh, &a)) in d_hidden.iter().zip(&act.hidden).enumerate() {
        let dpre = dh * (1.0 - a * a);
        let grow = &mut g[lay.w1 + k * p..lay.w1 + (k + 1) * p];
        for (gv, &xv) in grow.iter_mut().zip(x) {
            *gv = dpre * xv;
        }
        g[lay.b1 + k] = dpre;
    }

    Ok((loss, GradientVector(g)))
}

pub fn per_sample_gradient(
    params: &Params,
    x: &[f64],
    y: &[u8],
    weights: &LabelWeights,
) -> Result<GradientVector> {
    loss_and_gradient(params, x, y, weights).map(|(_, g)| g)
}

/// Encoder outputs for every row of `x`, computed row-parallel.
pub fn embed_batch(params: &Params, x: &Matrix) -> Result<EmbeddingMatrix> {
    if x.cols() != params.cfg.input_dim {
        return Err(Error::shape("embed_batch input", params.cfg.input_dim, x.cols()));
    }
    let d = params.cfg.embed_dim;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| activations(params, x.row(i)).embedding)
        .collect();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend(r);
    }
    EmbeddingMatrix::new(Matrix::new(x.rows(), d, data)?)
}

/// End-to-end logits for every row of `x`.
pub fn logits_batch(params: &Params, x: &Matrix) -> Result<Matrix> {
    if x.cols() != params.cfg.input_dim {
        return Err(Error::shape("logits_batch input", params.cfg.input_dim, x.cols()));
    }
    let l = params.cfg.n_labels;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| activations(params, x.row(i)).logits)
        .collect();
    let mut data = Vec::with_capacity(rows.len() * l);
    for r in rows {
        data.extend(r);
    }
    Matrix::new(x.rows(), l, data)
}

/// `w_l = negatives_l / positives_l` over the rows of `labels`.
pub fn pos_weights(labels: &LabelMatrix) -> Result<LabelWeights> {
    let n = labels.rows();
    let mut w = Vec::with_capacity(labels.cols());
    for l in 0..labels.cols() {
        let pos = (0..n).filter(|&i| labels.get(i, l) == 1).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateLabel {
                label: l,
                reason: format!("{pos} positives and {neg} negatives"),
            });
        }
        w.push(neg as f64 / pos as f64);
    }
    Ok(LabelWeights(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            hidden_dim: 7,
            embed_dim: 4,
            n_labels: 3,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(small_cfg(), 3).unwrap();
        assert_eq!(a, init_params(small_cfg(), 3).unwrap());
        assert!(a.b1().iter().chain(a.b2()).chain(a.bh()).all(|&v| v == 0.0));
    }

    #[test]
    fn seeds_give_different_weights() {
        let a = init_params(small_cfg(), 1).unwrap();
        let b = init_params(small_cfg(), 2).unwrap();
        let weights = |p: &Params| -> Vec<f64> {
            p.w1().iter().chain(p.w2()).chain(p.wh()).copied().collect()
        };
        let (wa, wb) = (weights(&a), weights(&b));
        let differ = wa.iter().zip(&wb).filter(|(x, y)| x != y).count();
        assert!(differ as f64 >= 0.99 * wa.len() as f64);
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = Params::zeros(small_cfg());
        let (e, z) = forward(&p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert!(e.iter().chain(&z).all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_network_is_tanh() {
        let cfg = ModelConfig {
            input_dim: 1,
            hidden_dim: 1,
            embed_dim: 1,
            n_labels: 1,
        };
        let p = Params::from_flat(cfg, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.7, 4.0] {
            let (_, z) = forward(&p, &[x]).unwrap();
            assert_eq!(z[0], f64::tanh(x));
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = Params::zeros(small_cfg());
        assert!(matches!(forward(&p, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn loss_at_zero_logits() {
        let w = LabelWeights::uniform(3);
        let loss = sample_loss(&[0.0; 3], &[1, 0, 1], &w).unwrap();
        assert!((loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_hand_value() {
        let w = LabelWeights(vec![2.0]);
        let loss = sample_loss(&[1.0], &[1], &w).unwrap();
        let want = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_with_confident_correct_logits() {
        let w = LabelWeights::uniform(1);
        assert!(sample_loss(&[40.0], &[1], &w).unwrap() < 1e-16);
        assert!(sample_loss(&[-40.0], &[0], &w).unwrap() < 1e-16);
        // stable far from zero
        assert!(sample_loss(&[-800.0], &[1], &w).unwrap().is_finite());
    }

    #[test]
    fn loss_rejects_non_binary_label() {
        let w = LabelWeights::uniform(1);
        assert!(matches!(sample_loss(&[0.0], &[2], &w), Err(Error::Input(_))));
    }

    #[test]
    fn saturated_correct_logits_have_negligible_gradient() {
        let mut p = init_params(small_cfg(), 5).unwrap();
        let y = [1u8, 0, 1];
        for (b, &yl) in p.bh_mut().iter_mut().zip(&y) {
            *b = if yl == 1 { 60.0 } else { -60.0 };
        }
        let g = per_sample_gradient(&p, &[0.1, 0.2, -0.3, 0.4, 0.0], &y, &LabelWeights::uniform(3)).unwrap();
        assert!(g.norm() <= 1e-6, "norm {}", g.norm());
    }

    #[test]
    fn doubling_weight_doubles_head_gradient() {
        let p = init_params(small_cfg(), 9).unwrap();
        let x = [0.3, -0.1, 0.8, 0.2, -0.5];
        let y = [1u8, 1, 1];
        let g1 = per_sample_gradient(&p, &x, &y, &LabelWeights(vec![1.0, 1.0, 1.0])).unwrap();
        let g2 = per_sample_gradient(&p, &x, &y, &LabelWeights(vec![1.0, 2.0, 1.0])).unwrap();
        let lay = small_cfg().layout();
        let d = small_cfg().embed_dim;
        for j in 0..d {
            let i = lay.wh + d + j;
            assert!((g2.0[i] - 2.0 * g1.0[i]).abs() <= 1e-15 * g1.0[i].abs().max(1.0));
        }
        assert_eq!(g2.0[lay.bh + 1], 2.0 * g1.0[lay.bh + 1]);
    }

    #[test]
    fn pos_weight_counts() {
        let mut data = vec![1u8; 10];
        data.extend(vec![0u8; 90]);
        let labels = LabelMatrix::new(100, 1, data).unwrap();
        assert_eq!(pos_weights(&labels).unwrap().0, vec![9.0]);

        let balanced = LabelMatrix::new(4, 1, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(pos_weights(&balanced).unwrap().0, vec![1.0]);

        let all_pos = LabelMatrix::new(3, 2, vec![1, 0, 1, 1, 1, 0]).unwrap();
        assert!(matches!(
            pos_weights(&all_pos),
            Err(Error::DegenerateLabel { label: 0, .. })
        ));
    }

    #[test]
    fn embed_batch_matches_forward() {
        let p = init_params(small_cfg(), 4).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4, 0.5]]).unwrap();
        let z = embed_batch(&p, &x).unwrap();
        let (e, _) = forward(&p, x.row(0)).unwrap();
        assert_eq!(z.matrix().row(0), e.as_slice());
    }
}
