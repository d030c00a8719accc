use serde::Serialize;

use crate::error::{GpcmError, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Gelman-Rubin potential scale reduction factor (non-split form).
///
/// `sqrt(((n-1)/n * W + B/n) / W)` where `W` is the mean within-chain variance
/// and `B = n * var(chain means)`. Chains longer than the shortest one are
/// truncated.
pub fn psrf(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(GpcmError::InvalidInput("PSRF needs at least two chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(GpcmError::InvalidInput("PSRF needs at least two draws per chain".into()));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let within: Vec<f64> = chains.iter().map(|c| sample_var(c)).collect();
    let w = mean(&within);
    if !(w > 0.0) {
        return Err(GpcmError::Diagnostic("zero within-chain variance (stuck chain)".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let b = nf * sample_var(&means);
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (divisor n - 1; 0 for a single draw).
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, SD and central 90% interval of pooled draws.
pub fn summarize(name: &str, draws: &[f64]) -> Result<ParamSummary> {
    if draws.is_empty() {
        return Err(GpcmError::InvalidInput(format!("no draws for {name}")));
    }
    let m = mean(draws);
    let sd = if draws.len() > 1 { sample_var(draws).sqrt() } else { 0.0 };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q05 = quantile_sorted(&sorted, 0.05);
    let q95 = quantile_sorted(&sorted, 0.95);
    Ok(ParamSummary {
        name: name.to_owned(),
        // pooled means can drift past a constant interval by one ulp
        mean: m.clamp(q05, q95),
        sd,
        q05,
        q95,
    })
}
