use serde::Serialize;

use super::metrics::{correlation, mean_sd};
use crate::error::{GpcmError, Result};
use crate::mcmc::McmcFit;
use crate::mmle::{EapScores, MmleFit};
use crate::model::{ItemBank, ThetaVector};

/// Point estimates from one estimator: items plus abilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub bank: ItemBank,
    pub thetas: ThetaVector,
}

impl Estimates {
    pub fn from_mmle(fit: &MmleFit, eap: &EapScores) -> Self {
        Estimates {
            bank: fit.bank_hat.clone(),
            thetas: eap.theta.clone(),
        }
    }

    pub fn from_mcmc(fit: &McmcFit) -> Self {
        Estimates {
            bank: fit.bank_hat.clone(),
            thetas: fit.theta_hat.clone(),
        }
    }

    /// `(name, value)` for every item parameter, `a[j]` then `b[j,k]`.
    pub fn item_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (j, item) in self.bank.items().iter().enumerate() {
            out.push((format!("a[{}]", j + 1), item.discrimination()));
        }
        for (j, item) in self.bank.items().iter().enumerate() {
            for (h, &d) in item.steps().iter().enumerate() {
                out.push((format!("b[{},{}]", j + 1, h + 2), d));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDifference {
    pub name: String,
    pub first: f64,
    pub second: f64,
    /// `second - first`
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub params: Vec<ParamDifference>,
    pub n_persons: usize,
    /// Mean of `second - first` over persons.
    pub ability_mean_diff: f64,
    pub ability_sd_diff: f64,
    pub ability_max_abs_diff: f64,
    pub ability_correlation: f64,
}

/// Side-by-side differences between two sets of estimates on the same data.
pub fn compare_estimates(first: &Estimates, second: &Estimates) -> Result<ComparisonReport> {
    if first.thetas.len() != second.thetas.len() {
        return Err(GpcmError::DimensionMismatch {
            what: "persons",
            expected: first.thetas.len(),
            found: second.thetas.len(),
        });
    }
    if first.bank.n_categories() != second.bank.n_categories() {
        return Err(GpcmError::InvalidInput("item banks differ in shape".into()));
    }
    let params = first
        .item_values()
        .into_iter()
        .zip(second.item_values())
        .map(|((name, a), (_, b))| ParamDifference {
            name,
            first: a,
            second: b,
            difference: b - a,
        })
        .collect();
    let x = first.thetas.values();
    let y = second.thetas.values();
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let (mean, sd) = mean_sd(&diffs);
    Ok(ComparisonReport {
        params,
        n_persons: x.len(),
        ability_mean_diff: mean,
        ability_sd_diff: sd,
        ability_max_abs_diff: diffs.iter().fold(0.0, |m, d| m.max(d.abs())),
        ability_correlation: correlation(x, y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemParams;

    fn estimates(shift: f64) -> Estimates {
        Estimates {
            bank: ItemBank::new(vec![ItemParams::new(1.2, vec![-0.5, 0.4]).unwrap()]),
            thetas: ThetaVector::new(vec![-1.0 + shift, 0.2 + shift, 0.9 + shift, 1.4 + shift]).unwrap(),
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let e = estimates(0.0);
        let r = compare_estimates(&e, &e).unwrap();
        assert!(r.params.iter().all(|p| p.difference == 0.0));
        assert_eq!(r.ability_mean_diff, 0.0);
        assert_eq!(r.ability_max_abs_diff, 0.0);
        assert!((r.ability_correlation - 1.0).abs() < 1e-15);
        assert_eq!(r.params[0].name, "a[1]");
        assert_eq!(r.params[2].name, "b[1,3]");
    }

    #[test]
    fn shifted_abilities() {
        let r = compare_estimates(&estimates(0.0), &estimates(0.01)).unwrap();
        assert!((r.ability_mean_diff - 0.01).abs() < 1e-12);
        assert!(r.ability_sd_diff < 1e-12);
        assert!((r.ability_correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let mut b = estimates(0.0);
        b.thetas = ThetaVector::new(vec![0.0]).unwrap();
        assert!(compare_estimates(&estimates(0.0), &b).is_err());
    }
}
