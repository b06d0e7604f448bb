//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! For integer orders α the per-step RDP is
//! `log(Σ_k C(α,k)(1−q)^(α−k) q^k exp(k(k−1)/(2σ²))) / (α−1)`, evaluated as
//! a log-sum-exp. Composition over steps is additive and the conversion to
//! `(ε, δ)` is the classic `min_α ε_α + log(1/δ)/(α−1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default σ search bracket for calibration.
pub const SIGMA_FLOOR: f64 = 0.3;
pub const SIGMA_CEILING: f64 = 500.0;
/// Calibrated ε lands in `[target − CALIBRATION_TOL, target]`.
pub const CALIBRATION_TOL: f64 = 1e-3;

pub fn default_orders() -> Vec<f64> {
    (2..=64).map(f64::from).chain([128.0, 256.0]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
    pub steps_composed: u64,
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    // Sum of logs; exact enough for n <= a few hundred.
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn rdp_order(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    if alpha.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "subsampled bound needs integer orders, got {alpha}"
        )));
    }
    let a = alpha as u64;
    let (log_q, log_1mq) = (q.ln(), (-q).ln_1p());
    let inv = 1.0 / (2.0 * sigma * sigma);
    let terms: Vec<f64> = (0..=a)
        .map(|k| {
            let kf = k as f64;
            ln_binomial(a, k) + (a - k) as f64 * log_1mq + kf * log_q + kf * (kf - 1.0) * inv
        })
        .collect();
    // k = 0 and k = 1 terms are finite even when q underflows, so the sum is >= 0.
    Ok((log_sum_exp(&terms) / (alpha - 1.0)).max(0.0))
}

/// Single-step RDP curve of the subsampled Gaussian mechanism.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, orders: &[f64]) -> Result<RdpCurve> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("sample rate must lie in (0, 1], got {q}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise multiplier must be > 0, got {sigma}")));
    }
    if orders.iter().any(|&a| !(a > 1.0 && a.is_finite())) {
        return Err(Error::Domain("RDP orders must be finite and > 1".into()));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("RDP orders must be strictly ascending".into()));
    }
    let values = orders
        .iter()
        .map(|&a| rdp_order(q, sigma, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdpCurve {
        orders: orders.to_vec(),
        values,
        steps_composed: 1,
    })
}

/// Additive composition: every value scaled by `steps`.
pub fn compose(curve: &RdpCurve, steps: u64) -> RdpCurve {
    RdpCurve {
        orders: curve.orders.clone(),
        values: curve.values.iter().map(|v| v * steps as f64).collect(),
        steps_composed: curve.steps_composed * steps,
    }
}

/// Returns `(ε, best_order)`; ties go to the smaller order.
pub fn rdp_to_eps(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if curve.orders.is_empty() || curve.orders.len() != curve.values.len() {
        return Err(Error::AccountantState(format!(
            "curve has {} orders and {} values",
            curve.orders.len(),
            curve.values.len()
        )));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&alpha, &v) in curve.orders.iter().zip(&curve.values) {
        let eps = v + log_inv_delta / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// ε after `steps` steps at sampling rate `q` and noise multiplier `sigma`.
pub fn epsilon(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<(f64, f64)> {
    if steps == 0 {
        return Ok((0.0, default_orders()[0]));
    }
    let curve = rdp_subsampled_gaussian(q, sigma, &default_orders())?;
    rdp_to_eps(&compose(&curve, steps), delta)
}

/// Bisection for σ so that `ε(σ) ∈ [target − 1e-3, target]`.
pub fn calibrate_sigma(target: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Domain(format!("target epsilon must be finite and > 0, got {target}")));
    }
    if steps == 0 {
        return Err(Error::Domain("cannot calibrate sigma for zero steps".into()));
    }
    let eps_of = |s: f64| epsilon(q, s, steps, delta).map(|(e, _)| e);

    let low = SIGMA_FLOOR;
    let eps_low = eps_of(low)?;
    if eps_low <= target {
        // Already under budget at the floor: refuse rather than clamp.
        return Err(Error::Calibration {
            target,
            low,
            high: low,
            eps_at_low: eps_low,
            eps_at_high: eps_low,
        });
    }
    let mut high = SIGMA_CEILING;
    let mut eps_high = eps_of(high)?;
    while eps_high > target {
        if high > 1e12 {
            return Err(Error::Calibration {
                target,
                low,
                high,
                eps_at_low: eps_low,
                eps_at_high: eps_high,
            });
        }
        high *= 2.0;
        eps_high = eps_of(high)?;
    }
    let mut lo = low;
    let mut hi = high;
    // Invariant: eps(lo) > target >= eps(hi).
    for _ in 0..200 {
        if eps_high >= target - CALIBRATION_TOL {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = eps_of(mid)?;
        if e > target {
            lo = mid;
        } else {
            hi = mid;
            eps_high = e;
        }
    }
    Err(Error::Calibration {
        target,
        low: lo,
        high: hi,
        eps_at_low: eps_of(lo)?,
        eps_at_high: eps_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_gaussian_order_two() {
        let c = rdp_subsampled_gaussian(1.0, 1.0, &[2.0]).unwrap();
        assert_eq!(c.values, vec![1.0]);
    }

    #[test]
    fn vanishing_sample_rate() {
        let mut prev = f64::INFINITY;
        for q in [1e-2, 1e-5, 1e-10, 1e-100, 1e-300] {
            let c = rdp_subsampled_gaussian(q, 1.0, &default_orders()).unwrap();
            let max = c.values.iter().copied().fold(0.0, f64::max);
            assert!(max <= prev);
            prev = max;
        }
        assert!(prev < 1e-12, "{prev}");
    }

    #[test]
    fn binomial_bound_matches_direct_summation() {
        // Direct linear-space sum, independent of the log-space path.
        let (q, s, a) = (0.01f64, 1.0f64, 8u64);
        let mut sum = 0.0;
        let mut binom = 1.0;
        for k in 0..=a {
            if k > 0 {
                binom = binom * (a - k + 1) as f64 / k as f64;
            }
            sum += binom * (1.0 - q).powi((a - k) as i32) * q.powi(k as i32) * ((k * k.saturating_sub(1)) as f64 / (2.0 * s * s)).exp();
        }
        let want = sum.ln() / (a as f64 - 1.0);
        let got = rdp_subsampled_gaussian(q, s, &[8.0]).unwrap().values[0];
        assert!(((got - want) / want).abs() < 1e-9);
    }

    #[test]
    fn binomial_bound_high_precision_reference() {
        // mpmath, 50 digits
        let got = rdp_subsampled_gaussian(0.01, 1.0, &[8.0]).unwrap().values[0];
        let want = 0.000_893_643_907_606_031_8;
        assert!(((got - want) / want).abs() < 1e-9, "{got}");
        let got = rdp_subsampled_gaussian(0.01, 0.5, &[32.0]).unwrap().values[0];
        let want = 59.246_275_937_044_55;
        assert!(((got - want) / want).abs() < 1e-9, "{got}");
    }

    #[test]
    fn composition_rules() {
        let c = rdp_subsampled_gaussian(0.05, 1.3, &default_orders()).unwrap();
        assert!(compose(&c, 0).values.iter().all(|&v| v == 0.0));
        assert_eq!(compose(&c, 1), c);
        let ab = compose(&compose(&c, 3), 4);
        assert_eq!(ab.values, compose(&c, 12).values);
        assert_eq!(ab.steps_composed, 12);
    }

    #[test]
    fn delta_near_one_approaches_min_rdp() {
        let c = rdp_subsampled_gaussian(1.0, 2.0, &default_orders()).unwrap();
        let (eps, _) = rdp_to_eps(&c, 1.0 - 1e-15).unwrap();
        let min = c.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((eps - min).abs() < 1e-12);
    }

    #[test]
    fn empty_curve_is_state_error() {
        let c = RdpCurve { orders: vec![], values: vec![], steps_composed: 0 };
        assert!(matches!(rdp_to_eps(&c, 1e-5), Err(Error::AccountantState(_))));
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(rdp_subsampled_gaussian(0.0, 1.0, &[2.0]), Err(Error::Domain(_))));
        assert!(matches!(rdp_subsampled_gaussian(1.5, 1.0, &[2.0]), Err(Error::Domain(_))));
        assert!(matches!(rdp_subsampled_gaussian(0.5, 0.0, &[2.0]), Err(Error::Domain(_))));
        assert!(matches!(rdp_subsampled_gaussian(0.5, 1.0, &[2.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn finite_across_grid_at_small_sigma() {
        let c = rdp_subsampled_gaussian(0.5, SIGMA_FLOOR, &default_orders()).unwrap();
        assert!(c.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn huge_target_is_refused_not_clamped() {
        let r = calibrate_sigma(1e6, 1e-5, 0.01, 100);
        assert!(matches!(r, Err(Error::Calibration { .. })));
    }

    #[test]
    fn larger_target_smaller_sigma() {
        let s1 = calibrate_sigma(1.0, 1e-5, 0.02, 500).unwrap();
        let s4 = calibrate_sigma(4.0, 1e-5, 0.02, 500).unwrap();
        assert!(s4 < s1);
    }

    #[test]
    fn zero_steps_is_free() {
        assert_eq!(epsilon(0.1, 1.0, 0, 1e-5).unwrap().0, 0.0);
    }
}
