mod common;

use common::{gaussian_matrix, rel_err, rng};
use dprgmi::geometry::{covariance, covariance_summary, displacement, effective_dimension, EmbeddingMatrix};
use dprgmi::matrix::Matrix;
use rand::Rng;

fn orthogonal(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> Matrix {
    // Gram-Schmidt on a Gaussian matrix, applied twice for accuracy.
    let g = gaussian_matrix(r, d, d);
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| g.get(i, j)).collect()).collect();
    for j in 0..d {
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (v, u) in tail[0].iter_mut().zip(&head[k]) {
                    *v -= dot * u;
                }
            }
        }
        let n = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= n);
    }
    let data = (0..d).flat_map(|i| cols.iter().map(move |c| c[i]).collect::<Vec<_>>()).collect();
    Matrix::new(d, d, data).unwrap()
}

fn emb(m: Matrix) -> EmbeddingMatrix {
    EmbeddingMatrix::new(m).unwrap()
}

#[test]
fn d_eff_lies_in_its_range() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = r.random_range(2..40);
        let d = r.random_range(1..12);
        let rank = r.random_range(1..=d);
        // Low-rank product plus per-column scales to cover anisotropic cases.
        let a = gaussian_matrix(&mut r, n, rank);
        let b = gaussian_matrix(&mut r, rank, d);
        let mut z = a.matmul(&b).unwrap();
        for i in 0..n {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v *= 1.0 + j as f64;
            }
        }
        let de = effective_dimension(&emb(z)).unwrap();
        let upper = (n - 1).min(d) as f64;
        assert!(de >= 1.0 - 1e-12 && de <= upper + 1e-9, "n={n} d={d} d_eff={de}");
    }
}

#[test]
fn rotation_and_scale_invariance() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.random_range(5..60);
        let d = r.random_range(2..10);
        let z = gaussian_matrix(&mut r, n, d);
        let z0 = gaussian_matrix(&mut r, n, d);
        let q = orthogonal(&mut r, d);
        let base = effective_dimension(&emb(z.clone())).unwrap();
        let rotated = effective_dimension(&emb(z.matmul(&q).unwrap())).unwrap();
        let scaled = effective_dimension(&emb(z.scaled(7.3))).unwrap();
        assert!(rel_err(base, rotated) <= 1e-10);
        assert!(rel_err(base, scaled) <= 1e-10);
        let delta = displacement(&emb(z.clone()), &emb(z0.clone())).unwrap();
        let delta_rot = displacement(&emb(z.matmul(&q).unwrap()), &emb(z0.matmul(&q).unwrap())).unwrap();
        assert!(rel_err(delta, delta_rot) <= 1e-10);
    }
}

#[test]
fn hand_cases() {
    let a = 6f64.sqrt();
    let b = 2f64.sqrt();
    let z = Matrix::from_rows(&[vec![a, 0.0], vec![-a, 0.0], vec![0.0, b], vec![0.0, -b]]).unwrap();
    let cov = covariance(&emb(z.clone())).unwrap();
    assert!((cov.get(0, 0) - 3.0).abs() < 1e-12 && (cov.get(1, 1) - 1.0).abs() < 1e-12);
    assert!((effective_dimension(&emb(z)).unwrap() - 1.6).abs() < 1e-12);

    let rank1 = Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![2.0, 4.0, -2.0], vec![-3.0, -6.0, 3.0]]).unwrap();
    assert!((effective_dimension(&emb(rank1)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn isotropic_gaussian_has_full_dimension() {
    let mut r = rng(3);
    let z = gaussian_matrix(&mut r, 100_000, 8);
    let de = effective_dimension(&emb(z)).unwrap();
    assert!((7.5..=8.0).contains(&de), "{de}");
}

#[test]
fn translation_law() {
    let mut r = rng(4);
    for _ in 0..20 {
        let n = r.random_range(1..30);
        let d = r.random_range(1..8);
        let z = gaussian_matrix(&mut r, n, d);
        let t: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let mut shifted = z.clone();
        for i in 0..n {
            for (v, s) in shifted.row_mut(i).iter_mut().zip(&t) {
                *v += s;
            }
        }
        let expected: f64 = t.iter().map(|v| v * v).sum();
        let got = displacement(&emb(shifted.clone()), &emb(z.clone())).unwrap();
        assert!(rel_err(got, expected) <= 1e-10);
        // The covariance ignores translations.
        let a = covariance_summary(&emb(z)).unwrap();
        let b = covariance_summary(&emb(shifted)).unwrap();
        if let (Some(x), Some(y)) = (a.d_eff, b.d_eff) {
            assert!(rel_err(x, y) < 1e-8);
        }
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let constant = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    assert!(effective_dimension(&emb(constant)).is_err());
    let single = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert!(effective_dimension(&emb(single)).is_err());
    let a = emb(Matrix::zeros(3, 2));
    let b = emb(Matrix::zeros(4, 2));
    assert!(displacement(&a, &b).is_err());
    assert!(EmbeddingMatrix::new(Matrix::from_rows(&[vec![f64::NAN]]).unwrap()).is_err());
}
