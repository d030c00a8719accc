//! Bayesian estimation of the GPCM with multi-chain HMC.
//!
//! Each fit runs `n_chains` independent chains (seeded from `(seed, attempt,
//! chain)`), keeps the post-warmup draws, and checks the potential scale
//! reduction factor of every parameter. If any PSRF reaches the cutoff the
//! whole fit is rerun with a fresh derived seed, up to `max_retries` times.

pub mod diagnostics;
pub mod hmc;
pub mod posterior;

use std::io::Write;

use log::{debug, info};
use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{psrf, summarize, ParamSummary};
pub use hmc::{run_chain, ChainOutput, HmcSettings, LogDensity};
pub use posterior::{GpcmPosterior, PriorSpec, StateLayout};

use crate::error::{GpcmError, Result};
use crate::model::{ItemBank, ItemParams, ResponseMatrix, ThetaVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub n_chains: usize,
    pub iters_per_chain: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub leapfrog_range: (usize, usize),
    pub seed: u64,
    pub psrf_cutoff: f64,
    pub max_retries: usize,
    /// Diagonal mass-matrix adaptation during warmup.
    pub adapt_mass: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            n_chains: 3,
            iters_per_chain: 600,
            warmup: 300,
            target_accept: 0.8,
            leapfrog_range: (5, 15),
            seed: 20_190_101,
            psrf_cutoff: 1.05,
            max_retries: 5,
            adapt_mass: true,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(GpcmError::Config("PSRF needs at least two chains".into()));
        }
        if self.warmup >= self.iters_per_chain || self.iters_per_chain - self.warmup < 2 {
            return Err(GpcmError::Config(
                "warmup must leave at least two retained iterations".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(GpcmError::Config("target_accept must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.leapfrog_range;
        if lo == 0 || lo > hi {
            return Err(GpcmError::Config("leapfrog range must be 1 <= lo <= hi".into()));
        }
        if !(self.psrf_cutoff > 1.0) {
            return Err(GpcmError::Config("PSRF cutoff must exceed 1".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iters_per_chain - self.warmup
    }

    fn settings(&self) -> HmcSettings {
        HmcSettings {
            n_iter: self.iters_per_chain,
            warmup: self.warmup,
            target_accept: self.target_accept,
            leapfrog_range: self.leapfrog_range,
            adapt_mass: self.adapt_mass,
        }
    }
}

/// Retained draws on the reported scale (`a`, `sigma_b` rather than their
/// logs), stored per parameter as `chains x draws`.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    values: Vec<f64>,
}

impl PosteriorDraws {
    fn from_chains(layout: &StateLayout, chains: &[ChainOutput]) -> Self {
        let names = layout.names();
        let dim = layout.dim();
        let n_chains = chains.len();
        let n_draws = chains.first().map_or(0, ChainOutput::n_draws);
        let mut values = vec![0.0; dim * n_chains * n_draws];
        let mut reported = vec![0.0; dim];
        for (c, chain) in chains.iter().enumerate() {
            for t in 0..n_draws {
                layout.to_reported(chain.draw(t), &mut reported);
                for (p, v) in reported.iter().enumerate() {
                    values[(p * n_chains + c) * n_draws + t] = *v;
                }
            }
        }
        PosteriorDraws {
            names,
            n_chains,
            n_draws,
            values,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws of parameter `p`, chain after chain.
    pub fn pooled(&self, p: usize) -> &[f64] {
        let len = self.n_chains * self.n_draws;
        &self.values[p * len..(p + 1) * len]
    }

    pub fn chain(&self, p: usize, c: usize) -> &[f64] {
        let start = (p * self.n_chains + c) * self.n_draws;
        &self.values[start..start + self.n_draws]
    }

    pub fn chains(&self, p: usize) -> Vec<&[f64]> {
        (0..self.n_chains).map(|c| self.chain(p, c)).collect()
    }

    pub fn mean(&self, p: usize) -> f64 {
        let d = self.pooled(p);
        d.iter().sum::<f64>() / d.len() as f64
    }

    /// Writes `chain,iteration,parameter,value` rows (1-based chain and
    /// retained-iteration indices).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["chain", "iteration", "parameter", "value"])?;
        for c in 0..self.n_chains {
            for t in 0..self.n_draws {
                for (p, name) in self.names.iter().enumerate() {
                    w.write_record([
                        (c + 1).to_string(),
                        (t + 1).to_string(),
                        name.clone(),
                        self.chain(p, c)[t].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-parameter posterior summaries.
pub fn posterior_summaries(draws: &PosteriorDraws) -> Result<Vec<ParamSummary>> {
    (0..draws.n_params())
        .map(|p| summarize(&draws.names[p], draws.pooled(p)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct McmcFit {
    /// Posterior means of the item parameters.
    pub bank_hat: ItemBank,
    /// Posterior means of the abilities.
    pub theta_hat: ThetaVector,
    pub draws: PosteriorDraws,
    pub psrf: Vec<f64>,
    pub n_retries: usize,
    pub accept_rate: Vec<f64>,
    pub step_size: Vec<f64>,
}

impl McmcFit {
    /// Largest PSRF and the parameter it belongs to.
    pub fn worst_psrf(&self) -> (String, f64) {
        worst(&self.psrf, self.draws.names())
    }
}

fn worst(psrf: &[f64], names: &[String]) -> (String, f64) {
    psrf.iter()
        .zip(names)
        .fold((String::new(), f64::NEG_INFINITY), |acc, (&r, n)| {
            if r > acc.1 || r.is_nan() {
                (n.clone(), r)
            } else {
                acc
            }
        })
}

/// Overdispersed starting point: abilities, steps and `mu` uniform on
/// (-2, 2), `log a` and `log sigma` uniform on (-1, 1).
fn initial_state<R: Rng>(layout: &StateLayout, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; layout.dim()];
    for (k, v) in x.iter_mut().enumerate() {
        let half = if k < layout.n_items || k == layout.log_sigma() { 1.0 } else { 2.0 };
        *v = rng.random_range(-half..half);
    }
    x
}

fn point_estimates(layout: &StateLayout, draws: &PosteriorDraws) -> Result<(ItemBank, ThetaVector)> {
    let bank = (0..layout.n_items)
        .map(|j| {
            let steps = layout.steps(j).map(|k| draws.mean(k)).collect();
            ItemParams::new(draws.mean(layout.log_a(j)), steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let theta = (0..layout.n_persons).map(|i| draws.mean(layout.theta(i))).collect();
    Ok((ItemBank::new(bank), ThetaVector::new(theta)?))
}

fn all_psrf(draws: &PosteriorDraws) -> Vec<f64> {
    (0..draws.n_params())
        .map(|p| psrf(&draws.chains(p)).unwrap_or(f64::INFINITY))
        .collect()
}

/// Fits the GPCM by HMC, rerunning until every PSRF is below the cutoff.
///
/// Point estimates are posterior means. Exhausting the retries is an error
/// carrying the worst PSRF.
pub fn fit_mcmc(data: &ResponseMatrix, m_per_item: &[usize], prior: &PriorSpec, cfg: &HmcConfig) -> Result<McmcFit> {
    cfg.validate()?;
    if m_per_item != data.n_categories() {
        return Err(GpcmError::InvalidInput(format!(
            "declared categories {m_per_item:?} disagree with data {:?}",
            data.n_categories()
        )));
    }
    let target = GpcmPosterior::new(data, prior.clone())?;
    let layout = target.layout().clone();
    let settings = cfg.settings();
    let mut last_worst = (String::new(), f64::INFINITY);

    for attempt in 0..=cfg.max_retries {
        let chains: Vec<ChainOutput> = (0..cfg.n_chains)
            .into_par_iter()
            .map(|c| {
                let mut rng = seed::rng(cfg.seed, &[seed::tag("mcmc"), attempt as u64, c as u64]);
                let init = initial_state(&layout, &mut rng);
                run_chain(&target, init, &settings, &mut rng)
            })
            .collect();
        let draws = PosteriorDraws::from_chains(&layout, &chains);
        let psrf = all_psrf(&draws);
        let (name, r) = worst(&psrf, draws.names());
        debug!("attempt {attempt}: worst PSRF {r:.4} on {name}");
        if r < cfg.psrf_cutoff {
            let (bank_hat, theta_hat) = point_estimates(&layout, &draws)?;
            return Ok(McmcFit {
                bank_hat,
                theta_hat,
                psrf,
                n_retries: attempt,
                accept_rate: chains.iter().map(|c| c.accept_rate).collect(),
                step_size: chains.iter().map(|c| c.step_size).collect(),
                draws,
            });
        }
        info!("PSRF {r:.4} on {name} at attempt {attempt}; re-estimating");
        last_worst = (name, r);
    }
    Err(GpcmError::Nonconvergence {
        parameter: last_worst.0,
        psrf: last_worst.1,
        retries: cfg.max_retries,
    })
}
