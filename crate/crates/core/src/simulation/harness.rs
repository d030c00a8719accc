//! Parameter-recovery runs over one simulation condition.
//!
//! Abilities are drawn once per (distribution, sample size) and shared by
//! every replication and test length of that pair; responses, and the MCMC
//! seed, are drawn per replication. Failed fits are excluded from the
//! metrics and recorded in the fit outcomes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::compare::Estimates;
use super::generate::{generate_responses, generate_thetas, generating_bank, LatentDistribution};
use super::metrics::mean_sd;
use crate::error::{GpcmError, Result};
use crate::mcmc::{fit_mcmc, HmcConfig, PriorSpec};
use crate::mmle::{eap_abilities, fit_mmle, EmConfig};
use crate::model::{ItemBank, ResponseMatrix, ThetaVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mmle,
    Mcmc,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Mmle => "mmle",
            Estimator::Mcmc => "mcmc",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = GpcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmle" => Ok(Estimator::Mmle),
            "mcmc" => Ok(Estimator::Mcmc),
            other => Err(GpcmError::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamClass {
    Discrimination,
    Location,
    Ability,
}

impl ParamClass {
    pub const ALL: [ParamClass; 3] = [ParamClass::Discrimination, ParamClass::Location, ParamClass::Ability];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamClass::Discrimination => "discrimination",
            ParamClass::Location => "location",
            ParamClass::Ability => "ability",
        }
    }
}

/// Sample sizes of the full design.
pub const SAMPLE_SIZES: [usize; 3] = [500, 1000, 2000];
/// Test lengths of the full design.
pub const TEST_LENGTHS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    pub distribution: LatentDistribution,
    pub sample_size: usize,
    pub test_length: usize,
    pub n_replications: usize,
    pub base_seed: u64,
}

impl SimCondition {
    pub fn new(distribution: LatentDistribution, sample_size: usize, test_length: usize, n_replications: usize, base_seed: u64) -> Self {
        SimCondition {
            distribution,
            sample_size,
            test_length,
            n_replications,
            base_seed,
        }
    }

    /// Parses `distribution,SS,TL`, e.g. `normal,500,5`.
    pub fn parse_spec(spec: &str, n_replications: usize, base_seed: u64) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let [dist, ss, tl] = parts.as_slice() else {
            return Err(GpcmError::Config(format!(
                "condition must look like distribution,SS,TL; got {spec:?}"
            )));
        };
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| GpcmError::Config(format!("{what} must be a positive integer, got {s:?}")))
        };
        let cond = SimCondition::new(dist.parse()?, num(ss, "sample size")?, num(tl, "test length")?, n_replications, base_seed);
        cond.validate()?;
        Ok(cond)
    }

    /// All 27 distribution x sample size x test length conditions.
    pub fn full_design(n_replications: usize, base_seed: u64) -> Result<Vec<SimCondition>> {
        let mut out = Vec::with_capacity(27);
        for dist in [LatentDistribution::Normal, LatentDistribution::skewed()?, LatentDistribution::Uniform] {
            for ss in SAMPLE_SIZES {
                for tl in TEST_LENGTHS {
                    out.push(SimCondition::new(dist, ss, tl, n_replications, base_seed));
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(GpcmError::Config("sample size must be positive".into()));
        }
        if self.test_length == 0 || self.test_length > generating_bank().len() {
            return Err(GpcmError::Config(format!(
                "test length must be in 1..={}, got {}",
                generating_bank().len(),
                self.test_length
            )));
        }
        if self.n_replications == 0 {
            return Err(GpcmError::Config("need at least one replication".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{}-ss{}-tl{}", self.distribution, self.sample_size, self.test_length)
    }

    /// Generating items: the first `test_length` items of the bank.
    pub fn bank(&self) -> Result<ItemBank> {
        generating_bank().prefix(self.test_length)
    }

    /// Seed of the ability draw; depends only on distribution and sample size.
    pub fn theta_seed(&self) -> u64 {
        seed::derive(
            self.base_seed,
            &[seed::tag("theta"), seed::tag(self.distribution.name()), self.sample_size as u64],
        )
    }

    pub fn replication_seed(&self, replication: usize, stage: &str) -> u64 {
        seed::derive(
            self.base_seed,
            &[
                seed::tag(stage),
                seed::tag(self.distribution.name()),
                self.sample_size as u64,
                self.test_length as u64,
                replication as u64,
            ],
        )
    }

    pub fn thetas(&self) -> Result<ThetaVector> {
        generate_thetas(&self.distribution, self.sample_size, self.theta_seed())
    }

    pub fn responses(&self, replication: usize, bank: &ItemBank, thetas: &ThetaVector) -> Result<ResponseMatrix> {
        generate_responses(bank, thetas, self.replication_seed(replication, "responses"))
    }
}

/// SHA-256 of the little-endian bytes of a theta vector, hex encoded.
pub fn theta_hash(thetas: &ThetaVector) -> String {
    let mut h = Sha256::new();
    for v in thetas.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub em: EmConfig,
    pub hmc: HmcConfig,
    pub prior: PriorSpec,
}

/// One row of the tidy per-replication output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRecord {
    pub condition_id: String,
    pub distribution: String,
    #[serde(rename = "SS")]
    pub sample_size: usize,
    #[serde(rename = "TL")]
    pub test_length: usize,
    pub replication: usize,
    pub estimator: Estimator,
    pub param_class: ParamClass,
    pub param_name: String,
    pub truth: f64,
    pub estimate: f64,
}

/// What happened to one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub condition_id: String,
    pub replication: usize,
    pub estimator: Estimator,
    pub included: bool,
    pub detail: String,
    /// EM cycles, or MCMC retries.
    pub iterations: usize,
    /// Largest PSRF (MCMC only, NaN otherwise).
    pub max_psrf: f64,
    /// Smallest per-chain post-warmup acceptance rate (MCMC only).
    pub min_accept: f64,
    pub max_accept: f64,
    /// Mean post-warmup acceptance over chains (MCMC only).
    pub mean_accept: f64,
    pub theta_hash: String,
}

/// Bias/RMSE/MSE of one parameter class: per-parameter values across
/// replications, then mean and SD over parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub condition_id: String,
    pub distribution: String,
    #[serde(rename = "SS")]
    pub sample_size: usize,
    #[serde(rename = "TL")]
    pub test_length: usize,
    pub estimator: Estimator,
    pub param_class: ParamClass,
    pub n_params: usize,
    pub n_replications: usize,
    pub n_excluded: usize,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub condition: SimCondition,
    pub records: Vec<TidyRecord>,
    pub outcomes: Vec<FitOutcome>,
    pub summaries: Vec<ClassSummary>,
}

impl RecoveryReport {
    pub fn summary(&self, estimator: Estimator, class: ParamClass) -> Option<&ClassSummary> {
        self.summaries
            .iter()
            .find(|s| s.estimator == estimator && s.param_class == class)
    }

    pub fn excluded(&self, estimator: Estimator) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.estimator == estimator && !o.included)
            .count()
    }
}

/// Groups tidy records by condition, estimator and class and computes the
/// per-parameter recovery metrics.
pub fn summarize_records(records: &[TidyRecord]) -> Vec<ClassSummary> {
    type Key = (String, Estimator, ParamClass);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, (Vec<String>, HashMap<String, Vec<f64>>, &TidyRecord)> = HashMap::new();
    let mut reps: HashMap<Key, Vec<usize>> = HashMap::new();
    for r in records {
        let key = (r.condition_id.clone(), r.estimator, r.param_class);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (Vec::new(), HashMap::new(), r)
        });
        let errs = entry.1.entry(r.param_name.clone()).or_insert_with(|| {
            entry.0.push(r.param_name.clone());
            Vec::new()
        });
        errs.push(r.estimate - r.truth);
        let seen = reps.entry(key).or_default();
        if !seen.contains(&r.replication) {
            seen.push(r.replication);
        }
    }
    order.sort_by(|a, b| (a.1, a.2).cmp(&(b.1, b.2)).then_with(|| a.0.cmp(&b.0)));
    order
        .into_iter()
        .map(|key| {
            let (names, errs, first) = &groups[&key];
            let mut biases = Vec::with_capacity(names.len());
            let mut mses = Vec::with_capacity(names.len());
            for name in names {
                let e = &errs[name];
                let n = e.len() as f64;
                biases.push(e.iter().sum::<f64>() / n);
                mses.push(e.iter().map(|v| v * v).sum::<f64>() / n);
            }
            let rmses: Vec<f64> = mses.iter().map(|m| m.sqrt()).collect();
            let (bias_mean, bias_sd) = mean_sd(&biases);
            let (rmse_mean, rmse_sd) = mean_sd(&rmses);
            let (mse_mean, mse_sd) = mean_sd(&mses);
            ClassSummary {
                condition_id: key.0.clone(),
                distribution: first.distribution.clone(),
                sample_size: first.sample_size,
                test_length: first.test_length,
                estimator: key.1,
                param_class: key.2,
                n_params: names.len(),
                n_replications: reps[&key].len(),
                n_excluded: 0,
                bias_mean,
                bias_sd,
                rmse_mean,
                rmse_sd,
                mse_mean,
                mse_sd,
            }
        })
        .collect()
}

fn push_records(
    out: &mut Vec<TidyRecord>,
    cond: &SimCondition,
    replication: usize,
    estimator: Estimator,
    truth: &Estimates,
    estimate: &Estimates,
) {
    let record = |class: ParamClass, name: String, t: f64, e: f64| TidyRecord {
        condition_id: cond.id(),
        distribution: cond.distribution.name().to_owned(),
        sample_size: cond.sample_size,
        test_length: cond.test_length,
        replication,
        estimator,
        param_class: class,
        param_name: name,
        truth: t,
        estimate: e,
    };
    for ((name, t), (_, e)) in truth.item_values().into_iter().zip(estimate.item_values()) {
        let class = if name.starts_with("a[") {
            ParamClass::Discrimination
        } else {
            ParamClass::Location
        };
        out.push(record(class, name, t, e));
    }
    for (i, (t, e)) in truth.thetas.values().iter().zip(estimate.thetas.values()).enumerate() {
        out.push(record(ParamClass::Ability, format!("theta[{}]", i + 1), *t, *e));
    }
}

fn run_replication(
    cond: &SimCondition,
    replication: usize,
    bank: &ItemBank,
    estimators: &[Estimator],
    settings: &EstimatorSettings,
) -> Result<(Vec<TidyRecord>, Vec<FitOutcome>)> {
    let thetas = cond.thetas()?;
    let hash = theta_hash(&thetas);
    let data = cond.responses(replication, bank, &thetas)?;
    let truth = Estimates {
        bank: bank.clone(),
        thetas: thetas.clone(),
    };
    let m = data.n_categories().to_vec();
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    for &est in estimators {
        let mut outcome = FitOutcome {
            condition_id: cond.id(),
            replication,
            estimator: est,
            included: false,
            detail: String::new(),
            iterations: 0,
            max_psrf: f64::NAN,
            min_accept: f64::NAN,
            max_accept: f64::NAN,
            mean_accept: f64::NAN,
            theta_hash: hash.clone(),
        };
        let fitted = match est {
            Estimator::Mmle => match fit_mmle(&data, &m, &settings.em) {
                Ok(fit) => {
                    outcome.iterations = fit.n_cycles;
                    if !fit.converged {
                        outcome.detail = format!("EM did not converge in {} cycles", fit.n_cycles);
                        None
                    } else if !fit.collapses.is_empty() {
                        outcome.detail = "unobserved categories collapsed".into();
                        None
                    } else {
                        let eap = eap_abilities(&data, &fit.bank_hat, &settings.em.grid)?;
                        Some(Estimates::from_mmle(&fit, &eap))
                    }
                }
                Err(e) => {
                    outcome.detail = e.to_string();
                    None
                }
            },
            Estimator::Mcmc => {
                let hmc = HmcConfig {
                    seed: cond.replication_seed(replication, "mcmc"),
                    ..settings.hmc.clone()
                };
                match fit_mcmc(&data, &m, &settings.prior, &hmc) {
                    Ok(fit) => {
                        outcome.iterations = fit.n_retries;
                        outcome.max_psrf = fit.worst_psrf().1;
                        outcome.min_accept = fit.accept_rate.iter().copied().fold(f64::INFINITY, f64::min);
                        outcome.max_accept = fit.accept_rate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        outcome.mean_accept = fit.accept_rate.iter().sum::<f64>() / fit.accept_rate.len() as f64;
                        Some(Estimates::from_mcmc(&fit))
                    }
                    Err(e) => {
                        outcome.detail = e.to_string();
                        None
                    }
                }
            }
        };
        if let Some(estimate) = fitted {
            outcome.included = true;
            push_records(&mut records, cond, replication, est, &truth, &estimate);
        } else {
            warn!("{} replication {replication} {est}: excluded ({})", cond.id(), outcome.detail);
        }
        outcomes.push(outcome);
    }
    Ok((records, outcomes))
}

/// Runs every replication of `cond` with the requested estimators.
pub fn run_condition(cond: &SimCondition, estimators: &[Estimator], settings: &EstimatorSettings) -> Result<RecoveryReport> {
    cond.validate()?;
    if estimators.is_empty() {
        return Err(GpcmError::Config("no estimators requested".into()));
    }
    let bank = cond.bank()?;
    let per_rep: Vec<(Vec<TidyRecord>, Vec<FitOutcome>)> = (1..=cond.n_replications)
        .into_par_iter()
        .map(|r| run_replication(cond, r, &bank, estimators, settings))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    for (rec, out) in per_rep {
        records.extend(rec);
        outcomes.extend(out);
    }
    let mut summaries = summarize_records(&records);
    for s in &mut summaries {
        s.n_excluded = outcomes
            .iter()
            .filter(|o| o.estimator == s.estimator && !o.included)
            .count();
    }
    for &est in estimators {
        let n = outcomes.iter().filter(|o| o.estimator == est && !o.included).count();
        info!("{} {est}: {n} of {} replications excluded", cond.id(), cond.n_replications);
    }
    Ok(RecoveryReport {
        condition: cond.clone(),
        records,
        outcomes,
        summaries,
    })
}
