//! Marginal maximum likelihood estimation by Bock-Aitkin EM.
//!
//! Abilities are integrated out over a fixed standard-normal quadrature grid.
//! The E-step works on unique response patterns (sorted, with multiplicities),
//! which makes item estimates independent of the order of persons. The M-step
//! runs a per-item Newton-Raphson on `(log a, d_1..d_{m-1})`.

use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpcmError, Result};
use crate::model::{category_logits, log_probs_unchecked, ItemBank, ItemParams, ResponseMatrix, ThetaVector};
use crate::quadrature::QuadratureGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub grid: QuadratureGrid,
    pub max_cycles: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub outer_tol: f64,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            grid: QuadratureGrid::default(),
            max_cycles: 500,
            outer_tol: 1e-4,
            newton_max_iter: 20,
            newton_tol: 1e-8,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_cycles == 0 || self.newton_max_iter == 0 {
            return Err(GpcmError::Config("EM iteration caps must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0 && self.newton_tol > 0.0) {
            return Err(GpcmError::Config("EM tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Record of categories merged because they were never observed.
///
/// `map[k]` is the fitted category that original category `k` was merged into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCollapse {
    pub item: usize,
    pub map: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MmleFit {
    pub bank_hat: ItemBank,
    /// Marginal log-likelihood after every E-step, ending at `bank_hat`.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_cycles: usize,
    pub collapses: Vec<CategoryCollapse>,
}

impl MmleFit {
    pub fn final_loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Expected category counts at every quadrature node for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    n_nodes: usize,
    n_categories: usize,
    // category-major: counts[k * n_nodes + q]
    counts: Vec<f64>,
}

impl ExpectedCounts {
    pub fn zeros(n_nodes: usize, n_categories: usize) -> Self {
        ExpectedCounts {
            n_nodes,
            n_categories,
            counts: vec![0.0; n_nodes * n_categories],
        }
    }

    /// Builds counts from a closure giving the count at `(node, category)`.
    pub fn from_fn(n_nodes: usize, n_categories: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut out = ExpectedCounts::zeros(n_nodes, n_categories);
        for k in 0..n_categories {
            for q in 0..n_nodes {
                let v = f(q, k);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(GpcmError::InvalidInput(format!(
                        "expected count at node {q}, category {k} must be non-negative, got {v}"
                    )));
                }
                out.counts[k * n_nodes + q] = v;
            }
        }
        Ok(out)
    }

    #[inline]
    pub fn get(&self, node: usize, category: usize) -> f64 {
        self.counts[category * self.n_nodes + node]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn node_total(&self, node: usize) -> f64 {
        (0..self.n_categories).map(|k| self.get(node, k)).sum()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Output of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    n_nodes: usize,
    posterior: Vec<f64>,
    pub expected: Vec<ExpectedCounts>,
    pub log_marginal: f64,
}

impl EStep {
    /// Posterior weights of `person` over the grid nodes.
    pub fn posterior(&self, person: usize) -> &[f64] {
        &self.posterior[person * self.n_nodes..(person + 1) * self.n_nodes]
    }

    pub fn n_persons(&self) -> usize {
        if self.n_nodes == 0 {
            0
        } else {
            self.posterior.len() / self.n_nodes
        }
    }
}

/// Unique response patterns in lexicographic order.
struct Patterns {
    n_items: usize,
    cells: Vec<u16>,
    freq: Vec<f64>,
    of_person: Vec<usize>,
}

impl Patterns {
    fn compress(data: &ResponseMatrix) -> Self {
        let mut index: BTreeMap<&[u16], usize> = BTreeMap::new();
        for row in data.rows() {
            *index.entry(row).or_insert(0) += 1;
        }
        let mut cells = Vec::with_capacity(index.len() * data.n_items());
        let mut freq = Vec::with_capacity(index.len());
        let mut position: BTreeMap<&[u16], usize> = BTreeMap::new();
        for (p, (row, n)) in index.iter().enumerate() {
            cells.extend_from_slice(row);
            freq.push(*n as f64);
            position.insert(row, p);
        }
        let of_person = data.rows().map(|row| position[row]).collect();
        Patterns {
            n_items: data.n_items(),
            cells,
            freq,
            of_person,
        }
    }

    fn len(&self) -> usize {
        self.freq.len()
    }

    fn pattern(&self, p: usize) -> &[u16] {
        &self.cells[p * self.n_items..(p + 1) * self.n_items]
    }
}

/// log p_jk(node q) laid out per item as `[k * n_nodes + q]`.
fn log_prob_tables(bank: &ItemBank, grid: &QuadratureGrid) -> Vec<Vec<f64>> {
    let nq = grid.len();
    bank.items()
        .iter()
        .map(|item| {
            let m = item.n_categories();
            let mut table = vec![0.0; m * nq];
            let mut lp = vec![0.0; m];
            for (q, &x) in grid.nodes().iter().enumerate() {
                log_probs_unchecked(x, item.discrimination(), item.steps(), &mut lp);
                for k in 0..m {
                    table[k * nq + q] = lp[k];
                }
            }
            table
        })
        .collect()
}

/// Posterior over the grid for every pattern, plus the summed log marginal.
fn pattern_posteriors(patterns: &Patterns, tables: &[Vec<f64>], grid: &QuadratureGrid) -> (Vec<f64>, f64) {
    let nq = grid.len();
    let log_prior: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
    let mut post = vec![0.0; patterns.len() * nq];
    let mut log_marginal = 0.0;
    for p in 0..patterns.len() {
        let acc = &mut post[p * nq..(p + 1) * nq];
        acc.copy_from_slice(&log_prior);
        for (table, &k) in tables.iter().zip(patterns.pattern(p)) {
            let col = &table[usize::from(k) * nq..(usize::from(k) + 1) * nq];
            for (a, c) in acc.iter_mut().zip(col) {
                *a += c;
            }
        }
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in acc.iter_mut() {
            *a = (*a - max).exp();
            sum += *a;
        }
        for a in acc.iter_mut() {
            *a /= sum;
        }
        log_marginal += patterns.freq[p] * (max + sum.ln());
    }
    (post, log_marginal)
}

fn expected_counts(patterns: &Patterns, post: &[f64], n_categories: &[usize], nq: usize) -> Vec<ExpectedCounts> {
    let mut expected: Vec<ExpectedCounts> = n_categories.iter().map(|&m| ExpectedCounts::zeros(nq, m)).collect();
    for p in 0..patterns.len() {
        let w = patterns.freq[p];
        let row = &post[p * nq..(p + 1) * nq];
        for (ec, &k) in expected.iter_mut().zip(patterns.pattern(p)) {
            let k = usize::from(k);
            let slot = &mut ec.counts[k * nq..(k + 1) * nq];
            for (s, r) in slot.iter_mut().zip(row) {
                *s += w * r;
            }
        }
    }
    expected
}

fn e_step_patterns(patterns: &Patterns, bank: &ItemBank, grid: &QuadratureGrid) -> (Vec<f64>, Vec<ExpectedCounts>, f64) {
    let tables = log_prob_tables(bank, grid);
    let (post, log_marginal) = pattern_posteriors(patterns, &tables, grid);
    let expected = expected_counts(patterns, &post, &bank.n_categories(), grid.len());
    (post, expected, log_marginal)
}

/// Bock-Aitkin E-step: posterior weights of every person over the grid, the
/// expected category counts per item and node, and the marginal
/// log-likelihood.
pub fn e_step(data: &ResponseMatrix, bank: &ItemBank, grid: &QuadratureGrid) -> Result<EStep> {
    data.check_against(bank)?;
    let patterns = Patterns::compress(data);
    let (post, expected, log_marginal) = e_step_patterns(&patterns, bank, grid);
    let nq = grid.len();
    let mut posterior = Vec::with_capacity(data.n_persons() * nq);
    for &p in &patterns.of_person {
        posterior.extend_from_slice(&post[p * nq..(p + 1) * nq]);
    }
    Ok(EStep {
        n_nodes: nq,
        posterior,
        expected,
        log_marginal,
    })
}

/// Expected complete-data log-likelihood of one item and its derivatives in
/// `(log a, steps)`.
struct ItemObjective<'a> {
    counts: &'a ExpectedCounts,
    nodes: &'a [f64],
    totals: Vec<f64>,
}

struct Derivatives {
    value: f64,
    grad: Vec<f64>,
    /// Observed Hessian, row-major.
    hessian: Vec<f64>,
    /// Expected information (always positive semi-definite), row-major.
    fisher: Vec<f64>,
}

impl<'a> ItemObjective<'a> {
    fn new(counts: &'a ExpectedCounts, grid: &'a QuadratureGrid) -> Self {
        let totals = (0..counts.n_nodes()).map(|q| counts.node_total(q)).collect();
        ItemObjective {
            counts,
            nodes: grid.nodes(),
            totals,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let a = x[0].exp();
        let steps = &x[1..];
        let mut lp = vec![0.0; x.len()];
        let mut total = 0.0;
        for (q, &theta) in self.nodes.iter().enumerate() {
            if self.totals[q] <= 0.0 {
                continue;
            }
            log_probs_unchecked(theta, a, steps, &mut lp);
            for (k, l) in lp.iter().enumerate() {
                let r = self.counts.get(q, k);
                if r > 0.0 {
                    total += r * l;
                }
            }
        }
        total
    }

    fn derivatives(&self, x: &[f64]) -> Derivatives {
        let m = x.len();
        let a = x[0].exp();
        let steps = &x[1..];
        let mut z = vec![0.0; m];
        let mut p = vec![0.0; m];
        // jac[k * m + i] = d z_k / d x_i
        let mut jac = vec![0.0; m * m];
        let mut mean_j = vec![0.0; m];
        let mut g_q = vec![0.0; m];
        let mut out = Derivatives {
            value: 0.0,
            grad: vec![0.0; m],
            hessian: vec![0.0; m * m],
            fisher: vec![0.0; m * m],
        };
        for (q, &theta) in self.nodes.iter().enumerate() {
            let n_q = self.totals[q];
            if n_q <= 0.0 {
                continue;
            }
            category_logits(theta, a, steps, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (pk, zk) in p.iter_mut().zip(&z) {
                *pk = (zk - max).exp();
                sum += *pk;
            }
            let lse = max + sum.ln();
            for pk in p.iter_mut() {
                *pk /= sum;
            }
            for k in 0..m {
                jac[k * m] = z[k];
                for h in 1..m {
                    jac[k * m + h] = if k >= h { -a } else { 0.0 };
                }
            }
            mean_j.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..m {
                for i in 0..m {
                    mean_j[i] += p[k] * jac[k * m + i];
                }
            }
            g_q.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..m {
                let r = self.counts.get(q, k);
                if r > 0.0 {
                    out.value += r * (z[k] - lse);
                    for i in 0..m {
                        g_q[i] += r * jac[k * m + i];
                    }
                }
            }
            for i in 0..m {
                g_q[i] -= n_q * mean_j[i];
                out.grad[i] += g_q[i];
            }
            for i in 0..m {
                for l in i..m {
                    let mut s = 0.0;
                    for k in 0..m {
                        s += p[k] * jac[k * m + i] * jac[k * m + l];
                    }
                    let cov = n_q * (s - mean_j[i] * mean_j[l]);
                    out.fisher[i * m + l] += cov;
                    out.hessian[i * m + l] -= cov;
                }
            }
            // second derivatives of z: d2z/dlog a^2 = z, d2z/dlog a dd_h = dz/dd_h
            out.hessian[0] += g_q[0];
            for h in 1..m {
                out.hessian[h] += g_q[h];
            }
        }
        for i in 0..m {
            for l in 0..i {
                out.hessian[i * m + l] = out.hessian[l * m + i];
                out.fisher[i * m + l] = out.fisher[l * m + i];
            }
        }
        out
    }
}

/// Solves `matrix * dx = rhs` for a symmetric positive-definite `matrix`.
fn spd_solve(matrix: &[f64], rhs: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let m = rhs.len();
    let mut mat = DMatrix::from_row_slice(m, m, matrix);
    for i in 0..m {
        mat[(i, i)] += ridge;
    }
    let chol = mat.cholesky()?;
    let dx = chol.solve(&DVector::from_column_slice(rhs));
    dx.iter().all(|v| v.is_finite()).then(|| dx.iter().copied().collect())
}

fn newton_direction(d: &Derivatives) -> Result<Vec<f64>> {
    let neg_h: Vec<f64> = d.hessian.iter().map(|v| -v).collect();
    if let Some(dx) = spd_solve(&neg_h, &d.grad, 0.0) {
        return Ok(dx);
    }
    if let Some(dx) = spd_solve(&d.fisher, &d.grad, 0.0) {
        return Ok(dx);
    }
    let m = d.grad.len();
    let scale = (0..m).map(|i| d.fisher[i * m + i].abs()).fold(1.0, f64::max);
    for ridge in [1e-8 * scale, 1e-4 * scale] {
        if let Some(dx) = spd_solve(&d.fisher, &d.grad, ridge) {
            return Ok(dx);
        }
    }
    Err(GpcmError::SingularHessian { item: 0 })
}

/// One item's M-step: Newton-Raphson with step halving on the expected
/// complete-data log-likelihood, starting from `start`.
///
/// The returned parameters never score below `start`.
pub fn m_step_item(counts: &ExpectedCounts, grid: &QuadratureGrid, start: &ItemParams, cfg: &EmConfig) -> Result<ItemParams> {
    if counts.n_nodes() != grid.len() {
        return Err(GpcmError::DimensionMismatch {
            what: "expected-count nodes",
            expected: grid.len(),
            found: counts.n_nodes(),
        });
    }
    if counts.n_categories() != start.n_categories() {
        return Err(GpcmError::DimensionMismatch {
            what: "expected-count categories",
            expected: start.n_categories(),
            found: counts.n_categories(),
        });
    }
    let objective = ItemObjective::new(counts, grid);
    let mut x: Vec<f64> = std::iter::once(start.log_discrimination())
        .chain(start.steps().iter().copied())
        .collect();
    let mut d = objective.derivatives(&x);
    for _ in 0..cfg.newton_max_iter {
        let gmax = d.grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if gmax < cfg.newton_tol {
            break;
        }
        let dx = newton_direction(&d)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + t * di).collect();
            let v = objective.value(&trial);
            if v.is_finite() && v >= d.value {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(trial) => {
                x = trial;
                d = objective.derivatives(&x);
            }
            // no ascent left at working precision
            None => break,
        }
    }
    ItemParams::from_log_discrimination(x[0], x[1..].to_vec())
}

/// Start values: `a = 1`, steps from the empirical cumulative logits
/// `ln(P(K < k) / P(K >= k))` with half-count smoothing.
fn start_values(data: &ResponseMatrix) -> Result<ItemBank> {
    data.category_counts()
        .iter()
        .map(|counts| {
            let total: f64 = counts.iter().map(|&c| c as f64 + 0.5).sum();
            let mut below = 0.0;
            let steps = (1..counts.len())
                .map(|k| {
                    below += counts[k - 1] as f64 + 0.5;
                    (below / (total - below)).ln()
                })
                .collect();
            ItemParams::new(1.0, steps)
        })
        .collect::<Result<Vec<_>>>()
        .map(ItemBank::new)
}

/// Merges unobserved categories into the nearest lower observed one (or the
/// lowest observed one for a leading gap).
fn collapse_unobserved(data: &ResponseMatrix) -> Result<(ResponseMatrix, Vec<CategoryCollapse>)> {
    let counts = data.category_counts();
    let mut maps = Vec::with_capacity(counts.len());
    let mut collapses = Vec::new();
    for (j, c) in counts.iter().enumerate() {
        let observed = c.iter().filter(|&&n| n > 0).count();
        if observed < 2 {
            return Err(GpcmError::ItemDegenerate { item: j });
        }
        let mut map = Vec::with_capacity(c.len());
        let mut next = 0usize;
        for &n in c {
            if n > 0 {
                map.push(next);
                next += 1;
            } else {
                map.push(next.saturating_sub(1));
            }
        }
        if observed < c.len() {
            warn!("item {j}: unobserved categories collapsed, map {map:?}");
            collapses.push(CategoryCollapse { item: j, map: map.clone() });
        }
        maps.push((map, observed));
    }
    if collapses.is_empty() {
        return Ok((data.clone(), collapses));
    }
    let n_categories = maps.iter().map(|(_, m)| *m).collect();
    let mut cells = Vec::with_capacity(data.n_persons() * data.n_items());
    for row in data.rows() {
        cells.extend(row.iter().zip(&maps).map(|(&v, (map, _))| map[usize::from(v)] as u16));
    }
    Ok((ResponseMatrix::new(data.n_persons(), n_categories, cells)?, collapses))
}

/// Recodes `data` with the category maps of a fit, so it can be scored
/// against the fit's (collapsed) items.
pub fn apply_collapses(data: &ResponseMatrix, collapses: &[CategoryCollapse]) -> Result<ResponseMatrix> {
    if collapses.is_empty() {
        return Ok(data.clone());
    }
    let mut m = data.n_categories().to_vec();
    let mut maps: Vec<Option<&[usize]>> = vec![None; data.n_items()];
    for c in collapses {
        if c.item >= data.n_items() || c.map.len() != m[c.item] {
            return Err(GpcmError::InvalidInput(format!("collapse map for item {} does not fit the data", c.item)));
        }
        m[c.item] = c.map.iter().max().map_or(0, |v| v + 1);
        maps[c.item] = Some(&c.map);
    }
    let mut cells = Vec::with_capacity(data.n_persons() * data.n_items());
    for row in data.rows() {
        cells.extend(row.iter().zip(&maps).map(|(&v, map)| match map {
            Some(map) => map[usize::from(v)] as u16,
            None => v,
        }));
    }
    ResponseMatrix::new(data.n_persons(), m, cells)
}

fn max_abs_change(old: &ItemBank, new: &ItemBank) -> f64 {
    old.items()
        .iter()
        .zip(new.items())
        .flat_map(|(o, n)| {
            std::iter::once((o.discrimination() - n.discrimination()).abs())
                .chain(o.steps().iter().zip(n.steps()).map(|(a, b)| (a - b).abs()))
        })
        .fold(0.0, f64::max)
}

/// Fits item parameters by marginal maximum likelihood.
///
/// `m_per_item` declares the category count of every item and must agree with
/// the matrix. Non-convergence is reported through `converged`, not an error.
pub fn fit_mmle(data: &ResponseMatrix, m_per_item: &[usize], config: &EmConfig) -> Result<MmleFit> {
    config.validate()?;
    if m_per_item != data.n_categories() {
        return Err(GpcmError::InvalidInput(format!(
            "declared categories {m_per_item:?} disagree with data {:?}",
            data.n_categories()
        )));
    }
    if data.n_persons() == 0 {
        return Err(GpcmError::InvalidInput("no persons to fit".into()));
    }
    let (work, collapses) = collapse_unobserved(data)?;
    let patterns = Patterns::compress(&work);
    let grid = &config.grid;
    let mut bank = start_values(&work)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut n_cycles = 0;

    for cycle in 1..=config.max_cycles {
        n_cycles = cycle;
        let (_, expected, ll) = e_step_patterns(&patterns, &bank, grid);
        push_checked(&mut trace, ll);
        let next: Vec<ItemParams> = bank
            .items()
            .par_iter()
            .zip(expected.par_iter())
            .enumerate()
            .map(|(j, (item, counts))| {
                m_step_item(counts, grid, item, config).map_err(|e| match e {
                    GpcmError::SingularHessian { .. } => GpcmError::SingularHessian { item: j },
                    e => e,
                })
            })
            .collect::<Result<_>>()?;
        let next = ItemBank::new(next);
        let change = max_abs_change(&bank, &next);
        bank = next;
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    let (_, _, ll) = e_step_patterns(&patterns, &bank, grid);
    push_checked(&mut trace, ll);
    debug!("EM finished after {n_cycles} cycles, converged={converged}, loglik={ll}");
    Ok(MmleFit {
        bank_hat: bank,
        loglik_trace: trace,
        converged,
        n_cycles,
        collapses,
    })
}

fn push_checked(trace: &mut Vec<f64>, ll: f64) {
    if let Some(&prev) = trace.last() {
        if ll < prev - 1e-8 {
            warn!("EM log-likelihood decreased from {prev} to {ll}");
        }
    }
    trace.push(ll);
}

/// Expected a posteriori abilities and posterior standard deviations.
#[derive(Debug, Clone)]
pub struct EapScores {
    pub theta: ThetaVector,
    pub sd: Vec<f64>,
}

/// Posterior mean and SD of every person's ability on `grid`, given fitted
/// items.
pub fn eap_abilities(data: &ResponseMatrix, bank_hat: &ItemBank, grid: &QuadratureGrid) -> Result<EapScores> {
    data.check_against(bank_hat)?;
    let patterns = Patterns::compress(data);
    let tables = log_prob_tables(bank_hat, grid);
    let (post, _) = pattern_posteriors(&patterns, &tables, grid);
    let nq = grid.len();
    let per_pattern: Vec<(f64, f64)> = (0..patterns.len())
        .map(|p| {
            let w = &post[p * nq..(p + 1) * nq];
            let mean: f64 = w.iter().zip(grid.nodes()).map(|(w, x)| w * x).sum();
            let var: f64 = w.iter().zip(grid.nodes()).map(|(w, x)| w * (x - mean).powi(2)).sum();
            (mean, var.sqrt())
        })
        .collect();
    let (theta, sd) = if data.n_items() == 0 {
        let prior = (grid.mean(), grid.sd());
        (vec![prior.0; data.n_persons()], vec![prior.1; data.n_persons()])
    } else {
        patterns.of_person.iter().map(|&p| per_pattern[p]).unzip()
    };
    Ok(EapScores {
        theta: ThetaVector::new(theta)?,
        sd,
    })
}
