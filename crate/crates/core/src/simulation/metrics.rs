//! Recovery metrics across replications.

use crate::error::{GpcmError, Result};

/// Mean signed error of `estimates` against `truth`.
pub fn bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(GpcmError::InvalidInput("bias needs at least one replication".into()));
    }
    Ok(estimates.iter().map(|e| e - truth).sum::<f64>() / estimates.len() as f64)
}

/// Mean squared error of `estimates` against `truth`.
pub fn mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(GpcmError::InvalidInput("mse needs at least one replication".into()));
    }
    Ok(estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64)
}

/// Root mean squared error of `estimates` against `truth`.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    mse(estimates, truth).map(f64::sqrt)
}

/// Mean and sample SD (divisor n - 1, 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Pearson correlation; NaN when either side is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(bias(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        let b = bias(&[1.1, 1.1, 1.1], 1.0).unwrap();
        let r = rmse(&[1.1, 1.1, 1.1], 1.0).unwrap();
        assert!((b - 0.1).abs() < 1e-12 && (r - 0.1).abs() < 1e-12);
        assert!(bias(&[1.0, 1.2], 1.1).unwrap().abs() < 1e-12);
        assert!((rmse(&[1.0, 1.2], 1.1).unwrap() - 0.1).abs() < 1e-12);
        assert!(bias(&[], 0.0).is_err() && rmse(&[], 0.0).is_err());
    }

    #[test]
    fn correlation_of_shift_is_one() {
        let x = [0.1, -0.4, 2.0, 0.7];
        let y: Vec<f64> = x.iter().map(|v| v + 0.01).collect();
        assert!((correlation(&x, &y) - 1.0).abs() < 1e-12);
        assert!(correlation(&[1.0, 1.0], &[0.0, 1.0]).is_nan());
    }
}
