mod common;

use common::{rel_err, rng};
use dprgmi::model::{forward, init_params, loss_and_gradient, sample_loss, LabelWeights, ModelConfig, Params};
use rand::Rng;
use rand_distr::StandardNormal;

fn loss_at(params: &Params, x: &[f64], y: &[u8], w: &LabelWeights) -> f64 {
    let (_, logits) = forward(params, x).unwrap();
    sample_loss(&logits, y, w).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(11);
    for case in 0..20u64 {
        let cfg = ModelConfig {
            input_dim: r.random_range(1..7),
            hidden_dim: r.random_range(1..9),
            embed_dim: r.random_range(1..5),
            n_labels: r.random_range(1..4),
        };
        let mut params = init_params(cfg, case).unwrap();
        for v in params.as_mut_slice() {
            *v += 0.3 * r.sample::<f64, _>(StandardNormal);
        }
        let x: Vec<f64> = (0..cfg.input_dim).map(|_| r.sample(StandardNormal)).collect();
        let y: Vec<u8> = (0..cfg.n_labels).map(|_| r.random_range(0..2)).collect();
        let w = LabelWeights::new((0..cfg.n_labels).map(|_| r.random_range(0.5..3.0)).collect()).unwrap();
        let (_, g) = loss_and_gradient(&params, &x, &y, &w).unwrap();

        let h = 1e-5;
        let mut fd = vec![0.0; params.len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let orig = params.as_slice()[k];
            params.as_mut_slice()[k] = orig + h;
            let up = loss_at(&params, &x, &y, &w);
            params.as_mut_slice()[k] = orig - h;
            let down = loss_at(&params, &x, &y, &w);
            params.as_mut_slice()[k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = g.0.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale <= 1e-5, "case {case}: relative error {}", diff / scale);
    }
}

#[test]
fn loss_matches_closed_form_for_zero_params() {
    let cfg = ModelConfig {
        input_dim: 3,
        hidden_dim: 4,
        embed_dim: 2,
        n_labels: 2,
    };
    let params = Params::zeros(cfg);
    let w = LabelWeights::new(vec![2.0, 1.0]).unwrap();
    // Zero logits: each label contributes w·log 2 (positive) or log 2 (negative).
    let loss = loss_at(&params, &[1.0, -2.0, 0.5], &[1, 0], &w);
    assert!(rel_err(loss, 3.0 * std::f64::consts::LN_2) < 1e-14);
}

#[test]
fn batch_gradient_is_sum_of_sample_gradients() {
    let (train, _) = common::small_data(60, 3);
    let cfg = common::small_model(&train);
    let params = init_params(cfg, 5).unwrap();
    let w = LabelWeights::uniform(cfg.n_labels);
    let mut total = vec![0.0; params.len()];
    let mut loss_total = 0.0;
    for i in 0..train.len() {
        let (l, g) = loss_and_gradient(&params, train.features.row(i), train.labels.row(i), &w).unwrap();
        loss_total += l;
        for (t, v) in total.iter_mut().zip(&g.0) {
            *t += v;
        }
    }
    // Loss of the concatenated sample set is additive, so the summed gradient
    // is the derivative of the summed loss.
    let h = 1e-6;
    let mut p = params.clone();
    for k in [0, params.len() / 2, params.len() - 1] {
        let orig = p.as_slice()[k];
        p.as_mut_slice()[k] = orig + h;
        let up: f64 = (0..train.len()).map(|i| loss_at(&p, train.features.row(i), train.labels.row(i), &w)).sum();
        p.as_mut_slice()[k] = orig - h;
        let down: f64 = (0..train.len()).map(|i| loss_at(&p, train.features.row(i), train.labels.row(i), &w)).sum();
        p.as_mut_slice()[k] = orig;
        assert!((total[k] - (up - down) / (2.0 * h)).abs() < 1e-5 * (1.0 + total[k].abs()));
    }
    assert!(loss_total.is_finite());
}

#[test]
fn init_is_seeded_and_scaled() {
    let cfg = ModelConfig {
        input_dim: 400,
        hidden_dim: 300,
        embed_dim: 16,
        n_labels: 3,
    };
    let a = init_params(cfg, 1).unwrap();
    assert_eq!(a, init_params(cfg, 1).unwrap());
    assert_ne!(a, init_params(cfg, 2).unwrap());
    let w1 = a.w1();
    let var = w1.iter().map(|v| v * v).sum::<f64>() / w1.len() as f64;
    assert!((var * 400.0 - 1.0).abs() < 0.02, "fan-in scaled variance {var}");
    assert!(a.b1().iter().chain(a.b2()).chain(a.bh()).all(|&v| v == 0.0));
}
