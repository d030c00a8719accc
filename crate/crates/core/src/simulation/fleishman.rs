//! Fleishman power-method transform `Y = a + bX + cX^2 + dX^3`, X ~ N(0, 1).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GpcmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleishmanCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FleishmanCoeffs {
    pub const IDENTITY: FleishmanCoeffs = FleishmanCoeffs {
        a: 0.0,
        b: 1.0,
        c: 0.0,
        d: 0.0,
    };

    #[inline]
    pub fn transform(&self, x: f64) -> f64 {
        self.a + x * (self.b + x * (self.c + x * self.d))
    }

    /// Residuals of the variance, skewness and excess-kurtosis equations.
    pub fn residuals(&self, skewness: f64, excess_kurtosis: f64) -> [f64; 3] {
        let r = system(self.b, self.c, self.d, skewness, excess_kurtosis);
        [r[0], r[1], r[2]]
    }
}

fn system(b: f64, c: f64, d: f64, skew: f64, kurt: f64) -> Vector3<f64> {
    let (b2, c2, d2) = (b * b, c * c, d * d);
    Vector3::new(
        b2 + 6.0 * b * d + 2.0 * c2 + 15.0 * d2 - 1.0,
        2.0 * c * (b2 + 24.0 * b * d + 105.0 * d2 + 2.0) - skew,
        24.0 * (b * d + c2 * (1.0 + b2 + 28.0 * b * d) + d2 * (12.0 + 48.0 * b * d + 141.0 * c2 + 225.0 * d2)) - kurt,
    )
}

fn jacobian(b: f64, c: f64, d: f64) -> Matrix3<f64> {
    let (b2, c2, d2) = (b * b, c * c, d * d);
    Matrix3::new(
        2.0 * b + 6.0 * d,
        4.0 * c,
        6.0 * b + 30.0 * d,
        2.0 * c * (2.0 * b + 24.0 * d),
        2.0 * (b2 + 24.0 * b * d + 105.0 * d2 + 2.0),
        2.0 * c * (24.0 * b + 210.0 * d),
        24.0 * (d + c2 * (2.0 * b + 28.0 * d) + 48.0 * d2 * d),
        24.0 * (2.0 * c * (1.0 + b2 + 28.0 * b * d) + 282.0 * c * d2),
        24.0 * (b + 28.0 * b * c2 + 2.0 * d * (12.0 + 48.0 * b * d + 141.0 * c2 + 225.0 * d2) + d2 * (48.0 * b + 450.0 * d)),
    )
}

/// Solves Fleishman's moment system for a standardized variable with the
/// given skewness and excess kurtosis, by damped Newton from `(b, c, d) =
/// (1, skew/6, 0)`. The residual norm of the returned solution is below 1e-10.
pub fn fleishman_coeffs(skewness: f64, excess_kurtosis: f64) -> Result<FleishmanCoeffs> {
    let infeasible = || GpcmError::Infeasible {
        skewness,
        kurtosis: excess_kurtosis,
    };
    if !(skewness.is_finite() && excess_kurtosis.is_finite()) {
        return Err(infeasible());
    }
    let mut x = Vector3::new(1.0, skewness / 6.0, 0.0);
    let mut f = system(x[0], x[1], x[2], skewness, excess_kurtosis);
    for _ in 0..200 {
        if f.norm() < 1e-13 {
            break;
        }
        let step = match jacobian(x[0], x[1], x[2]).lu().solve(&f) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(infeasible()),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..50 {
            let trial = x - step * t;
            let ft = system(trial[0], trial[1], trial[2], skewness, excess_kurtosis);
            if ft.norm() < f.norm() {
                x = trial;
                f = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if f.norm() >= 1e-10 || x[0] <= 0.0 {
        return Err(infeasible());
    }
    Ok(FleishmanCoeffs {
        a: -x[1],
        b: x[0],
        c: x[1],
        d: x[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_targets_give_identity() {
        let c = fleishman_coeffs(0.0, 0.0).unwrap();
        assert_eq!(c, FleishmanCoeffs::IDENTITY);
    }

    #[test]
    fn matches_reference_solution() {
        // scipy fsolve on the same system (tests/oracle/gpcm_oracle.py)
        let c = fleishman_coeffs(1.25, 1.5).unwrap();
        assert!((c.a + 0.28227102596774245).abs() < 1e-9);
        assert!((c.b - 1.037323971225543).abs() < 1e-9);
        assert!((c.c - 0.28227102596774245).abs() < 1e-9);
        assert!((c.d + 0.04209052633812061).abs() < 1e-9);
        assert!(c.residuals(1.25, 1.5).iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn negative_skew_mirrors() {
        let p = fleishman_coeffs(1.25, 1.5).unwrap();
        let n = fleishman_coeffs(-1.25, 1.5).unwrap();
        assert!((p.a + n.a).abs() < 1e-12 && (p.c + n.c).abs() < 1e-12);
        assert!((p.b - n.b).abs() < 1e-12 && (p.d - n.d).abs() < 1e-12);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        assert!(matches!(fleishman_coeffs(0.0, -1.5), Err(GpcmError::Infeasible { .. })));
        assert!(fleishman_coeffs(3.0, 0.0).is_err());
    }
}
