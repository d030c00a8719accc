//! Generalized partial credit model: category probabilities, likelihoods and
//! analytic gradients.
//!
//! Categories are 0-based. For an item with discrimination `a` and steps
//! `d_1..d_{m-1}` the logit of category `k` is
//!
//! ```text
//! z_k = a * (k * theta - (d_1 + ... + d_k)),   z_0 = 0
//! ```
//!
//! which is the partial credit numerator with the first (identically zero)
//! step dropped and the common `a * theta` term cancelled. Probabilities are
//! the softmax of `z`, evaluated through log-sum-exp.
//!
//! Gradients are taken with respect to `log a` so that callers work on an
//! unconstrained scale.

use serde::{Deserialize, Serialize};

use crate::error::{GpcmError, Result};

/// One item: discrimination and the `m - 1` free step (transition) locations.
///
/// The first step of the textbook parameterization is fixed at zero and is not
/// stored. Steps need not be ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    discrimination: f64,
    steps: Vec<f64>,
}

impl ItemParams {
    pub fn new(discrimination: f64, steps: Vec<f64>) -> Result<Self> {
        if !(discrimination.is_finite() && discrimination > 0.0) {
            return Err(GpcmError::InvalidInput(format!(
                "discrimination must be positive and finite, got {discrimination}"
            )));
        }
        if steps.is_empty() {
            return Err(GpcmError::InvalidInput(
                "an item needs at least one step (two categories)".into(),
            ));
        }
        if let Some(bad) = steps.iter().find(|s| !s.is_finite()) {
            return Err(GpcmError::InvalidInput(format!("non-finite step {bad}")));
        }
        Ok(ItemParams {
            discrimination,
            steps,
        })
    }

    pub fn from_log_discrimination(log_a: f64, steps: Vec<f64>) -> Result<Self> {
        ItemParams::new(log_a.exp(), steps)
    }

    #[inline]
    pub fn discrimination(&self) -> f64 {
        self.discrimination
    }

    #[inline]
    pub fn log_discrimination(&self) -> f64 {
        self.discrimination.ln()
    }

    #[inline]
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    #[inline]
    pub fn n_categories(&self) -> usize {
        self.steps.len() + 1
    }

    /// Number of free parameters: `log a` plus the steps.
    #[inline]
    pub fn n_params(&self) -> usize {
        self.steps.len() + 1
    }
}

/// An ordered list of items. Item `j` (0-based) is column `j` of a
/// [`ResponseMatrix`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ItemBank {
    items: Vec<ItemParams>,
}

impl ItemBank {
    pub fn new(items: Vec<ItemParams>) -> Self {
        ItemBank { items }
    }

    pub fn items(&self) -> &[ItemParams] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<&ItemParams> {
        self.items.get(j)
    }

    pub fn n_categories(&self) -> Vec<usize> {
        self.items.iter().map(ItemParams::n_categories).collect()
    }

    /// The first `n` items.
    pub fn prefix(&self, n: usize) -> Result<ItemBank> {
        if n > self.items.len() {
            return Err(GpcmError::DimensionMismatch {
                what: "test length",
                expected: self.items.len(),
                found: n,
            });
        }
        Ok(ItemBank::new(self.items[..n].to_vec()))
    }

    pub fn into_items(self) -> Vec<ItemParams> {
        self.items
    }
}

impl FromIterator<ItemParams> for ItemBank {
    fn from_iter<I: IntoIterator<Item = ItemParams>>(iter: I) -> Self {
        ItemBank::new(iter.into_iter().collect())
    }
}

/// Persons x items matrix of 0-based category responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    n_persons: usize,
    n_categories: Vec<usize>,
    data: Vec<u16>,
}

impl ResponseMatrix {
    /// Builds a matrix from row-major data, checking every entry against its
    /// item's category count.
    pub fn new(n_persons: usize, n_categories: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        let n_items = n_categories.len();
        if data.len() != n_persons * n_items {
            return Err(GpcmError::DimensionMismatch {
                what: "response cells",
                expected: n_persons * n_items,
                found: data.len(),
            });
        }
        if let Some(j) = n_categories.iter().position(|&m| m < 2) {
            return Err(GpcmError::InvalidInput(format!(
                "item {j} must have at least two categories"
            )));
        }
        if n_items > 0 {
            for (idx, &v) in data.iter().enumerate() {
                let (i, j) = (idx / n_items, idx % n_items);
                if usize::from(v) >= n_categories[j] {
                    return Err(GpcmError::ResponseOutOfRange {
                        person: i,
                        item: j,
                        value: i64::from(v),
                        n_categories: n_categories[j],
                    });
                }
            }
        }
        Ok(ResponseMatrix {
            n_persons,
            n_categories,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<u16>], n_categories: Vec<usize>) -> Result<Self> {
        let n_items = n_categories.len();
        let mut data = Vec::with_capacity(rows.len() * n_items);
        for row in rows {
            if row.len() != n_items {
                return Err(GpcmError::DimensionMismatch {
                    what: "row length",
                    expected: n_items,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        ResponseMatrix::new(rows.len(), n_categories, data)
    }

    #[inline]
    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_categories.len()
    }

    pub fn n_categories(&self) -> &[usize] {
        &self.n_categories
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> usize {
        usize::from(self.data[person * self.n_items() + item])
    }

    #[inline]
    pub fn row(&self, person: usize) -> &[u16] {
        let j = self.n_items();
        &self.data[person * j..(person + 1) * j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        (0..self.n_persons).map(move |i| self.row(i))
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_persons).map(move |i| self.get(i, item))
    }

    /// Observed frequency of each category, per item.
    pub fn category_counts(&self) -> Vec<Vec<usize>> {
        let mut counts: Vec<Vec<usize>> = self.n_categories.iter().map(|&m| vec![0; m]).collect();
        for row in self.rows() {
            for (j, &v) in row.iter().enumerate() {
                counts[j][usize::from(v)] += 1;
            }
        }
        counts
    }

    /// Checks that the matrix can be scored against `bank`.
    pub fn check_against(&self, bank: &ItemBank) -> Result<()> {
        if bank.len() != self.n_items() {
            return Err(GpcmError::DimensionMismatch {
                what: "items",
                expected: bank.len(),
                found: self.n_items(),
            });
        }
        for (j, (item, &m)) in bank.items().iter().zip(&self.n_categories).enumerate() {
            if item.n_categories() != m {
                return Err(GpcmError::InvalidInput(format!(
                    "item {j}: bank has {} categories, data declares {m}",
                    item.n_categories()
                )));
            }
        }
        Ok(())
    }
}

/// Latent trait values, one per person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector(Vec<f64>);

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GpcmError::InvalidInput(format!("non-finite theta {bad}")));
        }
        Ok(ThetaVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Nominal response model parameters for one item, reference category first.
#[derive(Debug, Clone, PartialEq)]
pub struct NrmParams {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

impl NrmParams {
    pub fn new(slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.len() != intercepts.len() {
            return Err(GpcmError::DimensionMismatch {
                what: "NRM intercepts",
                expected: slopes.len(),
                found: intercepts.len(),
            });
        }
        if slopes.len() < 2 {
            return Err(GpcmError::InvalidInput("NRM needs at least two categories".into()));
        }
        if slopes[0] != 0.0 || intercepts[0] != 0.0 {
            return Err(GpcmError::InvalidInput(
                "reference category slope and intercept must be zero".into(),
            ));
        }
        if slopes.iter().chain(&intercepts).any(|v| !v.is_finite()) {
            return Err(GpcmError::InvalidInput("non-finite NRM parameter".into()));
        }
        Ok(NrmParams { slopes, intercepts })
    }
}

/// Writes the category logits `z_k` for `(theta, a, steps)` into `out`.
#[inline]
pub(crate) fn category_logits(theta: f64, a: f64, steps: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), steps.len() + 1);
    out[0] = 0.0;
    let mut cum = 0.0;
    for (k, &d) in steps.iter().enumerate() {
        cum += d;
        out[k + 1] = a * ((k + 1) as f64 * theta - cum);
    }
}

/// In-place log-softmax; returns the log normalizer.
#[inline]
pub(crate) fn log_softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
    lse
}

/// Log category probabilities without input validation. Hot path for the
/// estimators.
#[inline]
pub(crate) fn log_probs_unchecked(theta: f64, a: f64, steps: &[f64], out: &mut [f64]) {
    category_logits(theta, a, steps, out);
    log_softmax_in_place(out);
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(GpcmError::InvalidInput(format!("non-finite theta {theta}")))
    }
}

/// Category probabilities of `item` at `theta`.
pub fn gpcm_category_probs(theta: f64, item: &ItemParams) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let mut out = vec![0.0; item.n_categories()];
    log_probs_unchecked(theta, item.discrimination, &item.steps, &mut out);
    for v in &mut out {
        *v = v.exp();
    }
    Ok(out)
}

/// Joint log-likelihood of the whole response matrix given abilities.
pub fn gpcm_log_likelihood(data: &ResponseMatrix, bank: &ItemBank, thetas: &ThetaVector) -> Result<f64> {
    data.check_against(bank)?;
    if thetas.len() != data.n_persons() {
        return Err(GpcmError::DimensionMismatch {
            what: "thetas",
            expected: data.n_persons(),
            found: thetas.len(),
        });
    }
    let max_m = bank.items().iter().map(ItemParams::n_categories).max().unwrap_or(0);
    let mut buf = vec![0.0; max_m];
    let mut total = 0.0;
    for (row, &theta) in data.rows().zip(thetas.values()) {
        for (item, &k) in bank.items().iter().zip(row) {
            let lp = &mut buf[..item.n_categories()];
            log_probs_unchecked(theta, item.discrimination, &item.steps, lp);
            total += lp[usize::from(k)];
        }
    }
    Ok(total)
}

/// Rewrites a GPCM item as the equivalent constrained nominal response item:
/// slope `a * k` and intercept `-a * (d_1 + ... + d_k)` for category `k`.
pub fn gpcm_to_nrm(item: &ItemParams) -> NrmParams {
    let a = item.discrimination;
    let m = item.n_categories();
    let mut slopes = Vec::with_capacity(m);
    let mut intercepts = Vec::with_capacity(m);
    slopes.push(0.0);
    intercepts.push(0.0);
    let mut cum = 0.0;
    for (k, &d) in item.steps.iter().enumerate() {
        cum += d;
        slopes.push(a * (k + 1) as f64);
        // written as 0.0 - x so that zero steps give +0.0, not -0.0
        intercepts.push(0.0 - a * cum);
    }
    NrmParams { slopes, intercepts }
}

/// Softmax of `slopes * theta + intercepts`.
pub fn nrm_category_probs(theta: f64, params: &NrmParams) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let mut z: Vec<f64> = params
        .slopes
        .iter()
        .zip(&params.intercepts)
        .map(|(s, c)| s * theta + c)
        .collect();
    log_softmax_in_place(&mut z);
    for v in &mut z {
        *v = v.exp();
    }
    Ok(z)
}

/// Accumulates the gradient of `log p_r` with respect to `(log a, d_1..d_{m-1})`
/// into `grad`, and returns `(log p_r, d log p_r / d theta)`.
///
/// `scratch` must have length `m`; on return it holds the category
/// probabilities.
#[inline]
pub(crate) fn accumulate_item_grad(
    theta: f64,
    a: f64,
    steps: &[f64],
    response: usize,
    weight: f64,
    scratch: &mut [f64],
    grad: &mut [f64],
) -> (f64, f64) {
    let m = steps.len() + 1;
    debug_assert_eq!(scratch.len(), m);
    debug_assert_eq!(grad.len(), m);
    category_logits(theta, a, steps, scratch);
    let z_r = scratch[response];
    let mut mean_z = 0.0;
    let mut mean_k = 0.0;
    let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (k, v) in scratch.iter_mut().enumerate() {
        let z = *v;
        let e = (z - max).exp();
        sum += e;
        mean_z += e * z;
        mean_k += e * k as f64;
        *v = e;
    }
    let inv = 1.0 / sum;
    mean_z *= inv;
    mean_k *= inv;
    let log_p = z_r - max - sum.ln();

    grad[0] += weight * (z_r - mean_z);
    // d log p_r / d d_h = -a ( [r >= h] - P(K >= h) ), h = 1..m-1
    let mut tail = 0.0;
    for h in (1..m).rev() {
        scratch[h] *= inv;
        tail += scratch[h];
        let ind = if response >= h { 1.0 } else { 0.0 };
        grad[h] -= weight * a * (ind - tail);
    }
    scratch[0] *= inv;
    (log_p, a * (response as f64 - mean_k))
}

/// Gradient of `log p(response | theta, item)` over `(log a, d_1..d_{m-1})`.
pub fn grad_item_loglik(theta: f64, item: &ItemParams, response: usize) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let m = item.n_categories();
    if response >= m {
        return Err(GpcmError::ResponseOutOfRange {
            person: 0,
            item: 0,
            value: response as i64,
            n_categories: m,
        });
    }
    let mut scratch = vec![0.0; m];
    let mut grad = vec![0.0; m];
    accumulate_item_grad(
        theta,
        item.discrimination,
        &item.steps,
        response,
        1.0,
        &mut scratch,
        &mut grad,
    );
    Ok(grad)
}

/// Derivative of one person's log-likelihood with respect to theta:
/// `sum_j a_j (k_j - E[K_j | theta])`.
pub fn grad_theta_loglik(theta: f64, items: &ItemBank, responses: &[u16]) -> Result<f64> {
    check_theta(theta)?;
    if responses.len() != items.len() {
        return Err(GpcmError::DimensionMismatch {
            what: "responses",
            expected: items.len(),
            found: responses.len(),
        });
    }
    let mut total = 0.0;
    for (j, (item, &k)) in items.items().iter().zip(responses).enumerate() {
        let k = usize::from(k);
        if k >= item.n_categories() {
            return Err(GpcmError::ResponseOutOfRange {
                person: 0,
                item: j,
                value: k as i64,
                n_categories: item.n_categories(),
            });
        }
        let mut lp = vec![0.0; item.n_categories()];
        log_probs_unchecked(theta, item.discrimination, &item.steps, &mut lp);
        let expected: f64 = lp.iter().enumerate().map(|(c, l)| c as f64 * l.exp()).sum();
        total += item.discrimination * (k as f64 - expected);
    }
    Ok(total)
}
