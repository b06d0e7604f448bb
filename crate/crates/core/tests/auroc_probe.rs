mod common;

use common::{gaussian_embeddings, rng};
use dprgmi::evaluation::{auroc, macro_auroc, probe_predict, train_probe, train_probe_from, utilization_gap, Utility};
use dprgmi::matrix::{LabelMatrix, Matrix};
use dprgmi::model::LabelWeights;
use rand::Rng;

fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn random_instance(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = r.random_range(2..=50);
        let levels = r.random_range(1..12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 * 0.25 - 1.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn auroc_matches_pair_counting() {
    let mut r = rng(1);
    for _ in 0..500 {
        let (s, y) = random_instance(&mut r);
        assert!((auroc(&s, &y).unwrap() - brute_force(&s, &y)).abs() <= 1e-12);
    }
}

#[test]
fn auroc_is_invariant_under_monotone_maps_and_flips_with_labels() {
    let mut r = rng(2);
    for _ in 0..200 {
        let (s, y) = random_instance(&mut r);
        let a = auroc(&s, &y).unwrap();
        let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + v).collect();
        assert_eq!(a, auroc(&mapped, &y).unwrap());
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        assert!((auroc(&s, &flipped).unwrap() - (1.0 - a)).abs() <= 1e-12);
    }
}

#[test]
fn auroc_requires_both_classes() {
    assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    assert!(auroc(&[0.1, f64::NAN], &[0, 1]).is_err());
}

#[test]
fn macro_auroc_averages_defined_labels() {
    let scores = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.8, 0.2], vec![0.4, 0.5], vec![0.3, 0.7]]).unwrap();
    let labels = LabelMatrix::new(4, 2, vec![0, 1, 1, 1, 1, 1, 0, 1]).unwrap();
    let m = macro_auroc(&scores, &labels).unwrap();
    assert_eq!(m.per_label[1], None);
    assert_eq!(m.value, brute_force(&[0.1, 0.8, 0.4, 0.3], &[0, 1, 1, 0]));
}

fn planted(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> (dprgmi::geometry::EmbeddingMatrix, LabelMatrix) {
    let z = gaussian_embeddings(r, n, d);
    let mut y = Vec::with_capacity(n * 2);
    for i in 0..n {
        let row = z.matrix().row(i);
        let noise: f64 = r.random_range(-1.0..1.0);
        y.push(u8::from(row[0] + noise > 0.3));
        y.push(u8::from(row[1] - row[2] + noise > 0.0));
    }
    (z, LabelMatrix::new(n, 2, y).unwrap())
}

#[test]
fn probe_restarts_agree() {
    let mut r = rng(3);
    let (z, y) = planted(&mut r, 400, 6);
    let w = LabelWeights::new(vec![1.7, 1.0]).unwrap();
    let a = train_probe(&z, &y, 1e-2, &w).unwrap();
    let init: Vec<Vec<f64>> = (0..2).map(|_| (0..7).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let b = train_probe_from(&z, &y, 1e-2, &w, Some(&init)).unwrap();
    let dist: f64 = a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist <= 1e-6, "{dist}");
    for fit in a.fits.iter().chain(&b.fits) {
        assert!(fit.converged);
        assert!(fit.objective_history.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    }
}

#[test]
fn probe_recovers_planted_structure() {
    let mut r = rng(4);
    let (ztr, ytr) = planted(&mut r, 600, 5);
    let (zte, yte) = planted(&mut r, 300, 5);
    let probe = train_probe(&ztr, &ytr, 1e-2, &LabelWeights::uniform(2)).unwrap();
    let u = macro_auroc(&probe_predict(&probe, &zte).unwrap(), &yte).unwrap();
    assert!(u.value > 0.85, "{}", u.value);
}

#[test]
fn gap_units_must_agree() {
    let g = utilization_gap(Utility::Fraction(0.9), Utility::Fraction(0.85)).unwrap();
    assert!((g.value() - 0.05).abs() < 1e-15);
    assert!(utilization_gap(Utility::Fraction(0.9), Utility::Percent(85.0)).is_err());
}
