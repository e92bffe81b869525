//! Summary statistics.

use crate::error::{Error, Result};

/// Sample Pearson correlation of `(x, y)` pairs.
pub fn pearson(points: &[(f64, f64)]) -> Result<f64> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateSample(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegenerateSample("non-finite point".into()));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    crate::model::median(values)
}

/// First (1-based) index whose value exceeds `threshold`.
pub fn first_exceeding(values: &[f64], threshold: f64) -> Option<usize> {
    values.iter().position(|&v| v > threshold).map(|i| i + 1)
}

/// 1-based index of the minimum (first on ties).
pub fn argmin(values: &[f64]) -> Option<usize> {
    (0..values.len())
        .filter(|&i| !values[i].is_nan())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .map(|i| i + 1)
}
