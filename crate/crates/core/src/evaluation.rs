//! AUROC, ridge-regularized linear probes on frozen embeddings, and the
//! utilization gap between probe and end-to-end utility.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;
use crate::matrix::{LabelMatrix, Matrix};
use crate::model::LabelWeights;

pub const PROBE_GRAD_TOL: f64 = 1e-7;
pub const PROBE_MAX_ITER: usize = 5000;
pub const DEFAULT_PROBE_LAMBDA: f64 = 1e-2;
const POLISH_STEPS: usize = 3;

/// Area under the ROC curve via the Mann-Whitney rank sum, ties averaged.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUROC undefined with {n_pos} positives and {n_neg} negatives"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("AUROC scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuroc {
    pub value: f64,
    /// Per-label AUROC; `None` where the label has a single class.
    pub per_label: Vec<Option<f64>>,
}

impl MacroAuroc {
    pub fn included(&self) -> Vec<bool> {
        self.per_label.iter().map(Option::is_some).collect()
    }
}

/// Unweighted mean AUROC over labels that have both classes.
pub fn macro_auroc(scores: &Matrix, labels: &LabelMatrix) -> Result<MacroAuroc> {
    if scores.rows() != labels.rows() || scores.cols() != labels.cols() {
        return Err(Error::shape(
            "macro_auroc",
            format!("{}x{}", labels.rows(), labels.cols()),
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    let mut per_label = Vec::with_capacity(labels.cols());
    let mut column = vec![0.0; scores.rows()];
    for l in 0..labels.cols() {
        for (i, c) in column.iter_mut().enumerate() {
            *c = scores.get(i, l);
        }
        let y = labels.column(l);
        per_label.push(match auroc(&column, &y) {
            Ok(v) => Some(v),
            Err(Error::Evaluation(_)) => None,
            Err(e) => return Err(e),
        });
    }
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Evaluation("every label is single-class".into()));
    }
    Ok(MacroAuroc {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLabelFit {
    /// `d` weights followed by the bias.
    pub params: Vec<f64>,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step (starting value first).
    pub objective_history: Vec<f64>,
    /// True when the label had one class in training and was not fitted.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// L×d weights, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub n_labels: usize,
    pub dim: usize,
    pub lambda: f64,
    pub fits: Vec<ProbeLabelFit>,
}

impl ProbeModel {
    pub fn weights(&self, l: usize) -> &[f64] {
        &self.w[l * self.dim..(l + 1) * self.dim]
    }

    /// Flattened `[w_0, b_0, w_1, b_1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        (0..self.n_labels)
            .flat_map(|l| self.weights(l).iter().copied().chain([self.b[l]]))
            .collect()
    }
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

struct ProbeProblem<'a> {
    z: &'a Matrix,
    y: Vec<u8>,
    pos_weight: f64,
    lambda: f64,
}

impl ProbeProblem<'_> {
    fn score(&self, theta: &[f64], i: usize) -> f64 {
        let d = self.z.cols();
        theta[d] + self.z.row(i).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let n = self.z.rows();
        let d = self.z.cols();
        let data: f64 = (0..n)
            .map(|i| {
                let s = self.score(theta, i);
                if self.y[i] == 1 {
                    self.pos_weight * softplus(-s)
                } else {
                    softplus(s)
                }
            })
            .sum();
        data / n as f64 + 0.5 * self.lambda * theta[..d].iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient and Hessian (row-major, (d+1)²).
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.z.rows();
        let d = self.z.cols();
        let k = d + 1;
        let mut g = vec![0.0; k];
        let mut h = vec![0.0; k * k];
        let mut feat = vec![1.0; k];
        for i in 0..n {
            feat[..d].copy_from_slice(self.z.row(i));
            let s = self.score(theta, i);
            let (r, c) = if self.y[i] == 1 {
                (-self.pos_weight * sigmoid(-s), self.pos_weight * sigmoid(s) * sigmoid(-s))
            } else {
                (sigmoid(s), sigmoid(s) * sigmoid(-s))
            };
            for a in 0..k {
                g[a] += r * feat[a];
                let ca = c * feat[a];
                for (hv, fb) in h[a * k..a * k + a + 1].iter_mut().zip(&feat) {
                    *hv += ca * fb;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for a in 0..k {
            g[a] *= inv_n;
            for b in 0..=a {
                let v = h[a * k + b] * inv_n;
                h[a * k + b] = v;
                h[b * k + a] = v;
            }
        }
        for j in 0..d {
            g[j] += self.lambda * theta[j];
            h[j * k + j] += self.lambda;
        }
        (g, h)
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`; `None` if not PD.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|m| l[i * k + m] * y[m]).sum();
        y[i] = (b[i] - s) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| l[m * k + i] * x[m]).sum();
        x[i] = (y[i] - s) / l[i * k + i];
    }
    Some(x)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Damped Newton with Armijo backtracking; falls back to the gradient
/// direction when the Hessian is not positive definite.
fn fit_label(problem: &ProbeProblem<'_>, init: Vec<f64>) -> ProbeLabelFit {
    let mut theta = init;
    let mut f = problem.objective(&theta);
    let mut history = vec![f];
    let mut iterations = 0;
    let (mut g, mut h) = problem.derivatives(&theta);
    let mut gnorm = inf_norm(&g);
    while gnorm > PROBE_GRAD_TOL && iterations < PROBE_MAX_ITER {
        iterations += 1;
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut dir = cholesky_solve(&h, &neg_g).unwrap_or_else(|| neg_g.clone());
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope >= 0.0 {
            dir = neg_g;
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fc = problem.objective(&cand);
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // No decrease representable at this precision.
            break;
        };
        theta = cand;
        f = fc;
        history.push(f);
        (g, h) = problem.derivatives(&theta);
        gnorm = inf_norm(&g);
    }
    // The tolerance bounds the parameter error only by ‖∇‖/λ, so finish with
    // full Newton steps while they keep shrinking the gradient.
    if gnorm <= PROBE_GRAD_TOL {
        for _ in 0..POLISH_STEPS {
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let Some(dir) = cholesky_solve(&h, &neg_g) else { break };
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let fc = problem.objective(&cand);
            let (gc, hc) = problem.derivatives(&cand);
            let gc_norm = inf_norm(&gc);
            if !(fc <= f && gc_norm < gnorm) {
                break;
            }
            theta = cand;
            f = fc;
            history.push(f);
            (g, h, gnorm) = (gc, hc, gc_norm);
        }
    }
    ProbeLabelFit {
        params: theta,
        objective: f,
        grad_inf_norm: gnorm,
        iterations,
        converged: gnorm <= PROBE_GRAD_TOL,
        objective_history: history,
        skipped: false,
    }
}

/// Fits one ridge-regularized logistic probe per label.
///
/// `init`, when given, holds one `d+1` starting vector per label.
pub fn train_probe_from(
    z: &EmbeddingMatrix,
    y: &LabelMatrix,
    lambda: f64,
    weights: &LabelWeights,
    init: Option<&[Vec<f64>]>,
) -> Result<ProbeModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("probe lambda must be >= 0, got {lambda}")));
    }
    if z.n() != y.rows() {
        return Err(Error::shape("probe rows", y.rows(), z.n()));
    }
    if weights.len() != y.cols() {
        return Err(Error::shape("probe label weights", y.cols(), weights.len()));
    }
    let d = z.dim();
    let n_labels = y.cols();
    if let Some(init) = init {
        if init.len() != n_labels || init.iter().any(|v| v.len() != d + 1) {
            return Err(Error::shape("probe init", format!("{n_labels} x {}", d + 1), "other"));
        }
    }
    let fits: Vec<ProbeLabelFit> = (0..n_labels)
        .into_par_iter()
        .map(|l| {
            let col = y.column(l);
            let pos = col.iter().filter(|&&v| v == 1).count();
            let start = init.map_or_else(|| vec![0.0; d + 1], |i| i[l].clone());
            if pos == 0 || pos == col.len() {
                return ProbeLabelFit {
                    params: vec![0.0; d + 1],
                    objective: f64::NAN,
                    grad_inf_norm: f64::NAN,
                    iterations: 0,
                    converged: false,
                    objective_history: vec![],
                    skipped: true,
                };
            }
            let problem = ProbeProblem {
                z: z.matrix(),
                y: col,
                pos_weight: weights.0[l],
                lambda,
            };
            fit_label(&problem, start)
        })
        .collect();
    let mut w = Vec::with_capacity(n_labels * d);
    let mut b = Vec::with_capacity(n_labels);
    for (l, fit) in fits.iter().enumerate() {
        if fit.skipped {
            log::warn!("probe label {l} has a single class in training; skipped");
        } else if !fit.converged {
            log::warn!(
                "probe label {l} stopped after {} iterations with gradient norm {:e}",
                fit.iterations,
                fit.grad_inf_norm
            );
        }
        w.extend_from_slice(&fit.params[..d]);
        b.push(fit.params[d]);
    }
    Ok(ProbeModel {
        w,
        b,
        n_labels,
        dim: d,
        lambda,
        fits,
    })
}

pub fn train_probe(
    z: &EmbeddingMatrix,
    y: &LabelMatrix,
    lambda: f64,
    weights: &LabelWeights,
) -> Result<ProbeModel> {
    train_probe_from(z, y, lambda, weights, None)
}

/// Probe scores `Z·Wᵀ + b` (logits, monotone in probability).
pub fn probe_predict(probe: &ProbeModel, z: &EmbeddingMatrix) -> Result<Matrix> {
    if z.dim() != probe.dim {
        return Err(Error::shape("probe_predict", probe.dim, z.dim()));
    }
    let mut out = Matrix::zeros(z.n(), probe.n_labels);
    for i in 0..z.n() {
        let row = z.matrix().row(i);
        for l in 0..probe.n_labels {
            out.row_mut(i)[l] = probe.b[l] + probe.weights(l).iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(out)
}

/// A utility value tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Utility {
    Fraction(f64),
    Percent(f64),
}

impl Utility {
    fn check(self) -> Result<Self> {
        let ok = match self {
            Utility::Fraction(v) => (0.0..=1.0).contains(&v),
            Utility::Percent(v) => (0.0..=100.0).contains(&v),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::Unit(format!("{self:?} is outside its unit range")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Utility::Fraction(v) | Utility::Percent(v) => v,
        }
    }
}

/// `G = U_probe − U_end2end` in the shared unit of the inputs.
pub fn utilization_gap(probe: Utility, end2end: Utility) -> Result<Utility> {
    match (probe.check()?, end2end.check()?) {
        (Utility::Fraction(p), Utility::Fraction(e)) => Ok(Utility::Fraction(p - e)),
        (Utility::Percent(p), Utility::Percent(e)) => Ok(Utility::Percent(p - e)),
        _ => Err(Error::Unit("probe and end-to-end utilities use different units".into())),
    }
}
