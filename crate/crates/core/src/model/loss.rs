//! Gaussian negative log-likelihood and squared error, with output gradients.

use ndarray::{Array2, ArrayView2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothly squash a raw log-variance into [lo, hi]. Returns the bounded
/// value and its derivative w.r.t. `raw`.
///
/// The lower softplus can lift the value above `hi` by at most
/// `ln(1 + e^(lo - hi))`; that sliver is clamped.
pub fn soft_bound(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let upper = hi - softplus(hi - raw);
    let d_upper = sigmoid(hi - raw);
    let lv = lo + softplus(upper - lo);
    if lv > hi {
        return (hi, 0.0);
    }
    (lv, d_upper * sigmoid(upper - lo))
}

/// Gaussian NLL summed over dimensions: `0.5 * sum((y - mu)^2 e^-lv + lv + ln 2pi)`.
pub fn nll(mean: &[f64], logvar: &[f64], observed: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .zip(observed)
        .map(|((m, lv), y)| (y - m) * (y - m) * (-lv).exp() + lv + LN_2PI)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Squared error on the mean head.
    Squared,
    /// Gaussian NLL on (mean, raw log-variance) heads.
    Gaussian { lv_min: f64, lv_max: f64 },
}

/// Per-sample losses and d(mean_i w_i loss_i)/d(outputs).
///
/// `outputs` is `batch x out` where `out` is `d` for squared error and `2d`
/// (mean then raw log-variance) for the Gaussian loss.
pub fn loss_and_grad(
    kind: LossKind,
    outputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    weights: &[f64],
) -> (Vec<f64>, Array2<f64>) {
    let (b, d) = targets.dim();
    let mut grad = Array2::zeros(outputs.raw_dim());
    let mut losses = Vec::with_capacity(b);
    let scale = 1.0 / b as f64;
    for i in 0..b {
        let w = weights[i] * scale;
        let mut loss = 0.0;
        match kind {
            LossKind::Squared => {
                for j in 0..d {
                    let r = outputs[[i, j]] - targets[[i, j]];
                    loss += r * r;
                    grad[[i, j]] = 2.0 * r * w;
                }
            }
            LossKind::Gaussian { lv_min, lv_max } => {
                for j in 0..d {
                    let (lv, dlv) = soft_bound(outputs[[i, d + j]], lv_min, lv_max);
                    let r = outputs[[i, j]] - targets[[i, j]];
                    let inv_var = (-lv).exp();
                    loss += 0.5 * (r * r * inv_var + lv + LN_2PI);
                    grad[[i, j]] = r * inv_var * w;
                    grad[[i, d + j]] = 0.5 * (1.0 - r * r * inv_var) * dlv * w;
                }
            }
        }
        losses.push(loss);
    }
    (losses, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::Rng;

    #[test]
    fn nll_exact_cases() {
        let d = 3;
        let z = vec![0.0; d];
        assert!((nll(&z, &z, &z) - 0.5 * d as f64 * LN_2PI).abs() < 1e-15);
        assert!((nll(&[0.0], &[0.0], &[1.0]) - 0.5 * (1.0 + LN_2PI)).abs() < 1e-15);
    }

    /// Independent route: log of the product of normal densities.
    fn log_density_oracle(mean: &[f64], logvar: &[f64], y: &[f64]) -> f64 {
        mean.iter()
            .zip(logvar)
            .zip(y)
            .map(|((m, lv), y)| {
                let sd = (lv / 2.0).exp();
                let z = (y - m) / sd;
                -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln() - z * z / 2.0
            })
            .sum()
    }

    #[test]
    fn nll_matches_density_oracle() {
        let mut rng = seeding::rng(99);
        for _ in 0..1000 {
            let d = rng.random_range(1..6);
            let m: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = -nll(&m, &lv, &y);
            let b = log_density_oracle(&m, &lv, &y);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn soft_bound_stays_inside() {
        for raw in [-1e6, -50.0, -10.0, 0.0, 0.5, 3.0, 1e6] {
            let (lv, _) = soft_bound(raw, -10.0, 0.5);
            assert!((-10.0..=0.5).contains(&lv), "{raw} -> {lv}");
        }
        let (lv, d) = soft_bound(-3.0, -10.0, 0.5);
        let h = 1e-6;
        let fd = (soft_bound(-3.0 + h, -10.0, 0.5).0 - soft_bound(-3.0 - h, -10.0, 0.5).0) / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
        assert!((lv + 3.0).abs() < 0.1);
    }
}
