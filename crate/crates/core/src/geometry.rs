//! Representation displacement and spectral effective dimension.
//!
//! Both quantities use trace identities only: `tr(Σ²) = ‖Σ‖_F²` for a
//! symmetric covariance, so no eigensolver is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Encoder outputs, one row per sample. Always non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InsufficientData(format!(
                "embedding matrix must be at least 1x1, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.all_finite() {
            return Err(Error::Input("embedding matrix contains non-finite values".into()));
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.0.select_rows(indices))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub trace: f64,
    pub frob_sq: f64,
    /// `None` when the covariance vanishes.
    pub d_eff: Option<f64>,
}

/// Mean squared Euclidean distance between paired rows.
pub fn displacement(z_eps: &EmbeddingMatrix, z_0: &EmbeddingMatrix) -> Result<f64> {
    if z_eps.n() != z_0.n() || z_eps.dim() != z_0.dim() {
        return Err(Error::shape(
            "displacement pairing",
            format!("{}x{}", z_0.n(), z_0.dim()),
            format!("{}x{}", z_eps.n(), z_eps.dim()),
        ));
    }
    let total: f64 = z_eps
        .matrix()
        .iter_rows()
        .zip(z_0.matrix().iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(total / z_eps.n() as f64)
}

/// Mean-centered covariance with 1/N normalization.
pub fn covariance(z: &EmbeddingMatrix) -> Result<Matrix> {
    let n = z.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs N >= 2, got {n}")));
    }
    let d = z.dim();
    let mut mean = vec![0.0; d];
    for row in z.matrix().iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in z.matrix().iter_rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for j in 0..d {
            let cj = centered[j];
            let out = &mut cov.row_mut(j)[j..];
            for (o, ck) in out.iter_mut().zip(&centered[j..]) {
                *o += cj * ck;
            }
        }
    }
    for j in 0..d {
        for k in j..d {
            let v = cov.get(j, k) / n as f64;
            cov.row_mut(j)[k] = v;
            cov.row_mut(k)[j] = v;
        }
    }
    Ok(cov)
}

pub fn covariance_summary(z: &EmbeddingMatrix) -> Result<CovarianceSummary> {
    let cov = covariance(z)?;
    let d = cov.rows();
    let trace: f64 = (0..d).map(|j| cov.get(j, j)).sum();
    let frob_sq: f64 = cov.as_slice().iter().map(|v| v * v).sum();
    let scale = z.matrix().as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Rows equal up to rounding of the mean leave a residue of order (eps * scale)^2.
    let floor = d as f64 * (f64::EPSILON * scale).powi(2);
    let d_eff = if trace > floor && frob_sq > 0.0 {
        Some(trace * trace / frob_sq)
    } else {
        None
    };
    Ok(CovarianceSummary {
        trace: if d_eff.is_some() { trace } else { 0.0 },
        frob_sq: if d_eff.is_some() { frob_sq } else { 0.0 },
        d_eff,
    })
}

/// `tr(Σ)² / tr(Σ²)`; errors on a vanishing covariance.
pub fn effective_dimension(z: &EmbeddingMatrix) -> Result<f64> {
    covariance_summary(z)?.d_eff.ok_or_else(|| {
        Error::DegenerateGeometry("covariance is zero: all embeddings identical".into())
    })
}
