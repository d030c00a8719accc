//! Joint posterior of item parameters, abilities and the shared step
//! hyperparameters, on an unconstrained scale.
//!
//! State layout: `[log a_1..log a_J | steps of item 1 .. item J | theta_1..theta_N | mu | log sigma]`.
//!
//! Priors:
//! - `theta ~ N(0, 1)`
//! - `a ~ lognormal(0, 1)`, i.e. `log a ~ N(0, 1)` once the Jacobian is included
//! - every step `~ N(mu, sigma)`, `mu ~ N(0, 5)`, `sigma ~ half-Cauchy(0, 5)`,
//!   with `sigma` sampled as `log sigma` (Jacobian included)

use serde::{Deserialize, Serialize};

use crate::error::{GpcmError, Result};
use crate::mcmc::hmc::LogDensity;
use crate::model::{accumulate_item_grad, ResponseMatrix};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub log_a_mean: f64,
    pub log_a_sd: f64,
    pub step_mu_mean: f64,
    pub step_mu_sd: f64,
    pub step_sigma_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            theta_mean: 0.0,
            theta_sd: 1.0,
            log_a_mean: 0.0,
            log_a_sd: 1.0,
            step_mu_mean: 0.0,
            step_mu_sd: 5.0,
            step_sigma_scale: 5.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let scales = [self.theta_sd, self.log_a_sd, self.step_mu_sd, self.step_sigma_scale];
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(GpcmError::Config("prior scales must be positive".into()));
        }
        if ![self.theta_mean, self.log_a_mean, self.step_mu_mean].iter().all(|m| m.is_finite()) {
            return Err(GpcmError::Config("prior means must be finite".into()));
        }
        Ok(())
    }
}

/// Index map of the unconstrained state vector.
#[derive(Debug, Clone)]
pub struct StateLayout {
    pub n_items: usize,
    pub n_persons: usize,
    /// Start of each item's steps; one extra entry marks the end.
    pub step_offsets: Vec<usize>,
}

impl StateLayout {
    pub fn new(n_categories: &[usize], n_persons: usize) -> Self {
        let n_items = n_categories.len();
        let mut step_offsets = Vec::with_capacity(n_items + 1);
        let mut at = n_items;
        for &m in n_categories {
            step_offsets.push(at);
            at += m - 1;
        }
        step_offsets.push(at);
        StateLayout {
            n_items,
            n_persons,
            step_offsets,
        }
    }

    #[inline]
    pub fn log_a(&self, j: usize) -> usize {
        j
    }

    #[inline]
    pub fn steps(&self, j: usize) -> std::ops::Range<usize> {
        self.step_offsets[j]..self.step_offsets[j + 1]
    }

    pub fn all_steps(&self) -> std::ops::Range<usize> {
        self.n_items..self.theta_start()
    }

    #[inline]
    pub fn theta_start(&self) -> usize {
        self.step_offsets[self.n_items]
    }

    #[inline]
    pub fn theta(&self, i: usize) -> usize {
        self.theta_start() + i
    }

    #[inline]
    pub fn mu(&self) -> usize {
        self.theta_start() + self.n_persons
    }

    #[inline]
    pub fn log_sigma(&self) -> usize {
        self.mu() + 1
    }

    pub fn dim(&self) -> usize {
        self.log_sigma() + 1
    }

    /// Reported parameter names, in state order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.extend((0..self.n_items).map(|j| format!("a[{}]", j + 1)));
        for j in 0..self.n_items {
            let n = self.steps(j).len();
            names.extend((0..n).map(|h| format!("b[{},{}]", j + 1, h + 2)));
        }
        names.extend((0..self.n_persons).map(|i| format!("theta[{}]", i + 1)));
        names.push("mu_b".into());
        names.push("sigma_b".into());
        names
    }

    /// Maps an unconstrained state to reported values (exponentiating
    /// `log a` and `log sigma`).
    pub fn to_reported(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        for j in 0..self.n_items {
            out[j] = x[j].exp();
        }
        out[self.log_sigma()] = x[self.log_sigma()].exp();
    }
}

pub struct GpcmPosterior<'a> {
    data: &'a ResponseMatrix,
    prior: PriorSpec,
    layout: StateLayout,
}

impl<'a> GpcmPosterior<'a> {
    pub fn new(data: &'a ResponseMatrix, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        let layout = StateLayout::new(data.n_categories(), data.n_persons());
        Ok(GpcmPosterior { data, prior, layout })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// Log posterior density (with all normalizing constants of the priors).
    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.layout.dim()];
        self.log_density_grad(x, &mut g)
    }

    /// Gradient of [`Self::log_posterior`]; zeros for non-finite states.
    pub fn grad_log_posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.dim()];
        self.log_density_grad(x, &mut g);
        g
    }

    fn log_prior(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let p = &self.prior;
        let l = &self.layout;
        let mut lp = 0.0;

        let normal = |v: f64, mean: f64, sd: f64, g: &mut f64| {
            let z = (v - mean) / sd;
            *g -= z / sd;
            -0.5 * z * z - sd.ln() - HALF_LN_2PI
        };

        for i in 0..l.n_persons {
            let k = l.theta(i);
            lp += normal(x[k], p.theta_mean, p.theta_sd, &mut grad[k]);
        }
        for j in 0..l.n_items {
            lp += normal(x[j], p.log_a_mean, p.log_a_sd, &mut grad[j]);
        }

        let mu = x[l.mu()];
        let tau = x[l.log_sigma()];
        let sigma = tau.exp();
        let inv_var = 1.0 / (sigma * sigma);
        let mut d_mu = 0.0;
        let mut d_tau = 0.0;
        for k in l.all_steps() {
            let r = x[k] - mu;
            lp += -0.5 * r * r * inv_var - tau - HALF_LN_2PI;
            grad[k] -= r * inv_var;
            d_mu += r * inv_var;
            d_tau += r * r * inv_var - 1.0;
        }
        lp += normal(mu, p.step_mu_mean, p.step_mu_sd, &mut d_mu);

        // half-Cauchy on sigma, plus log|d sigma / d tau| = tau
        let s = p.step_sigma_scale;
        let u = (sigma / s).powi(2);
        lp += (2.0 / (std::f64::consts::PI * s)).ln() - u.ln_1p() + tau;
        d_tau += 1.0 - 2.0 * u / (1.0 + u);

        grad[l.mu()] += d_mu;
        grad[l.log_sigma()] += d_tau;
        lp
    }

    fn log_likelihood(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let n_items = l.n_items;
        if n_items == 0 {
            return 0.0;
        }
        let max_m = self.data.n_categories().iter().copied().max().unwrap_or(2);
        // per-item gradient over (log a, steps), accumulated across persons
        let mut item_grad: Vec<Vec<f64>> = self.data.n_categories().iter().map(|&m| vec![0.0; m]).collect();
        let a: Vec<f64> = (0..n_items).map(|j| x[j].exp()).collect();
        // exp(-a_j * cumulative step sum), fast-path weights per category
        let mut intercept_w: Vec<Vec<f64>> = Vec::with_capacity(n_items);
        for j in 0..n_items {
            let steps = &x[l.steps(j)];
            let mut w = Vec::with_capacity(steps.len() + 1);
            w.push(1.0);
            let mut cum = 0.0;
            for &d in steps {
                cum += d;
                w.push((-a[j] * cum).exp());
            }
            intercept_w.push(w);
        }
        let mut scratch = vec![0.0; max_m];
        let mut e = vec![0.0; max_m];
        let mut lp = 0.0;
        for i in 0..l.n_persons {
            let theta = x[l.theta(i)];
            let row = self.data.row(i);
            let mut d_theta = 0.0;
            for j in 0..n_items {
                let steps = &x[l.steps(j)];
                let m = steps.len() + 1;
                let r = usize::from(row[j]);
                let g = &mut item_grad[j];
                match fast_item_terms(theta, a[j], steps, &intercept_w[j], r, &mut e[..m], g) {
                    Some((log_p, dt)) => {
                        lp += log_p;
                        d_theta += dt;
                    }
                    None => {
                        let (log_p, dt) = accumulate_item_grad(theta, a[j], steps, r, 1.0, &mut scratch[..m], g);
                        lp += log_p;
                        d_theta += dt;
                    }
                }
            }
            grad[l.theta(i)] += d_theta;
        }
        for (j, g) in item_grad.iter().enumerate() {
            grad[l.log_a(j)] += g[0];
            for (slot, v) in l.steps(j).zip(&g[1..]) {
                grad[slot] += v;
            }
        }
        lp
    }
}

/// Item log-probability and gradient using `exp(z_k) = exp(a theta)^k *
/// exp(-a c_k)`, one exponential per cell. Returns `None` (leaving `grad`
/// untouched) when the products leave the safe floating-point range.
#[inline]
fn fast_item_terms(
    theta: f64,
    a: f64,
    steps: &[f64],
    intercept_w: &[f64],
    response: usize,
    e: &mut [f64],
    grad: &mut [f64],
) -> Option<(f64, f64)> {
    let m = e.len();
    let at = a * theta;
    if at.abs() * (m as f64) > 600.0 {
        return None;
    }
    let base = at.exp();
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in 0..m {
        let v = pow * intercept_w[k];
        e[k] = v;
        sum += v;
        pow *= base;
    }
    if !(sum.is_finite() && sum > 1e-280 && sum < 1e280) || e[response] <= 0.0 {
        return None;
    }
    let inv = 1.0 / sum;
    // z_k = a (k theta - c_k)
    let mut mean_z = 0.0;
    let mut mean_k = 0.0;
    let mut cum = 0.0;
    let mut z_r = 0.0;
    for k in 0..m {
        if k > 0 {
            cum += steps[k - 1];
        }
        let z = a * (k as f64 * theta - cum);
        if k == response {
            z_r = z;
        }
        let p = e[k] * inv;
        e[k] = p;
        mean_z += p * z;
        mean_k += p * k as f64;
    }
    grad[0] += z_r - mean_z;
    let mut tail = 0.0;
    for h in (1..m).rev() {
        tail += e[h];
        let ind = if response >= h { 1.0 } else { 0.0 };
        grad[h] -= a * (ind - tail);
    }
    Some((z_r - sum.ln(), a * (response as f64 - mean_k)))
}

impl LogDensity for GpcmPosterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if x.len() != self.layout.dim() || x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(x, grad) + self.log_likelihood(x, grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            lp
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_indices() {
        let l = StateLayout::new(&[3, 2], 4);
        assert_eq!(l.steps(0), 2..4);
        assert_eq!(l.steps(1), 4..5);
        assert_eq!(l.theta(0), 5);
        assert_eq!(l.mu(), 9);
        assert_eq!(l.log_sigma(), 10);
        assert_eq!(l.dim(), 11);
        let names = l.names();
        assert_eq!(names[2], "b[1,2]");
        assert_eq!(names[4], "b[2,2]");
        assert_eq!(names[5], "theta[1]");
        assert_eq!(names[10], "sigma_b");
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let data = ResponseMatrix::new(1, vec![2], vec![1]).unwrap();
        let post = GpcmPosterior::new(&data, PriorSpec::default()).unwrap();
        let mut x = vec![0.0; post.dim()];
        x[0] = f64::NAN;
        assert_eq!(post.log_posterior(&x), f64::NEG_INFINITY);
        assert!(post.grad_log_posterior(&x).iter().all(|g| *g == 0.0));
    }
}
