use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use gpcm::io::{self, Method, OutputDir, ResponseTable, RunConfig};
use gpcm::mcmc::{fit_mcmc, posterior_summaries, McmcFit};
use gpcm::mmle::{apply_collapses, eap_abilities, fit_mmle, MmleFit};
use gpcm::simulation::{
    compare_estimates, generate_responses, run_condition, summarize_records, ComparisonReport, Estimates, FitOutcome,
    SimCondition, TidyRecord,
};
use gpcm::{GpcmError, Result, ThetaVector};

const DEFAULT_SEED: u64 = 20_190_101;

#[derive(Debug, Parser)]
#[command(name = "gpcm", version, about = "GPCM estimation by EM and HMC, plus parameter-recovery simulations")]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON run configuration; command-line flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate response datasets for one condition
    Simulate(SimulateArgs),
    /// Fit a response file with MMLE, MCMC or both
    Fit(FitArgs),
    /// Run parameter-recovery replications
    Recover(RecoverArgs),
    /// Compare two sets of item and ability estimates
    Compare(CompareArgs),
    /// Recompute the summary table from a tidy CSV
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// distribution,SS,TL, e.g. normal,500,5
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of response datasets to write
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Response CSV with a header row of item names
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Sampler seed
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated category counts per item (default: inferred)
    #[arg(long)]
    categories: Option<String>,
    /// Also write every retained posterior draw
    #[arg(long)]
    draws: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    /// distribution,SS,TL; repeat for several conditions
    #[arg(long)]
    condition: Vec<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// All 27 conditions with 100 replications each (long)
    #[arg(long)]
    full_design: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    first_items: PathBuf,
    #[arg(long)]
    first_abilities: PathBuf,
    #[arg(long)]
    second_items: PathBuf,
    #[arg(long)]
    second_abilities: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Tidy per-replication CSV written by `recover`
    #[arg(long)]
    tidy: PathBuf,
    /// Fit outcome CSV, for exclusion counts
    #[arg(long)]
    fits: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error with the step it happened in.
struct CliError {
    context: String,
    source: GpcmError,
}

trait Context<T> {
    fn context(self, what: impl Into<String>) -> std::result::Result<T, CliError>;
}

impl<T> Context<T> for Result<T> {
    fn context(self, what: impl Into<String>) -> std::result::Result<T, CliError> {
        self.map_err(|source| CliError {
            context: what.into(),
            source,
        })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        context: "arguments".into(),
        source: GpcmError::Config(message.into()),
    }
}

fn error_line(kind: &str, message: &str, context: &str, code: i32) -> String {
    serde_json::json!({
        "error": kind,
        "message": message,
        "context": context,
        "exit_code": code,
    })
    .to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.kind().to_string();
            eprintln!("{}", error_line("usage", &msg, "arguments", 2));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.source.exit_code();
            eprintln!("error: {}: {}", e.context, e.source);
            eprintln!("{}", error_line(e.source.kind(), &e.source.to_string(), &e.context, code));
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).context("loading configuration")?,
        None => RunConfig::default(),
    };
    init_logging(config.verbosity);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&mut config, a),
        Command::Fit(a) => cmd_fit(&mut config, a),
        Command::Recover(a) => cmd_recover(&mut config, a),
        Command::Compare(a) => cmd_compare(&mut config, a),
        Command::Report(a) => cmd_report(&mut config, a),
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn out_dir(config: &mut RunConfig, flag: Option<PathBuf>, default: &str) -> CliResult<OutputDir> {
    if let Some(o) = flag {
        config.out_dir = Some(o);
    }
    let dir = config.out_dir.get_or_insert_with(|| PathBuf::from(default)).clone();
    config.validate().context("validating configuration")?;
    OutputDir::create(&dir).context(format!("creating {}", dir.display()))
}

fn csv_file<T: Serialize>(out: &mut OutputDir, name: &str, rows: &[T]) -> CliResult<()> {
    out.write(name, |b| io::write_rows(b, rows))
        .map(|_| ())
        .context(format!("writing {name}"))
}

fn json_file<T: Serialize>(out: &mut OutputDir, name: &str, value: &T) -> CliResult<()> {
    out.write(name, |b| {
        serde_json::to_writer_pretty(&mut *b, value)?;
        b.push(b'\n');
        Ok(())
    })
    .map(|_| ())
    .context(format!("writing {name}"))
}

/// Applies `--condition`, `--seed` and `--replications` on top of the
/// configuration's condition list.
fn resolve_conditions(
    config: &mut RunConfig,
    specs: &[String],
    seed: Option<u64>,
    replications: Option<usize>,
) -> CliResult<()> {
    if !specs.is_empty() {
        let reps = replications.unwrap_or(1);
        let base = seed.unwrap_or(DEFAULT_SEED);
        config.conditions = specs
            .iter()
            .map(|s| SimCondition::parse_spec(s, reps, base))
            .collect::<Result<_>>()
            .context("parsing --condition")?;
    } else {
        for c in &mut config.conditions {
            if let Some(s) = seed {
                c.base_seed = s;
            }
            if let Some(r) = replications {
                c.n_replications = r;
            }
        }
    }
    Ok(())
}

fn cmd_simulate(config: &mut RunConfig, a: SimulateArgs) -> CliResult<()> {
    let specs: Vec<String> = a.condition.into_iter().collect();
    resolve_conditions(config, &specs, a.seed, a.replications)?;
    let [cond] = config.conditions.as_slice() else {
        return Err(usage("simulate needs exactly one condition (--condition distribution,SS,TL)"));
    };
    let cond = cond.clone();
    let mut out = out_dir(config, a.out, "gpcm-simulate")?;
    let bank = cond.bank().context("building generating items")?;
    let thetas = cond.thetas().context("drawing abilities")?;
    out.write("true_items.csv", |b| io::write_items(b, &bank))
        .context("writing true_items.csv")?;
    out.write("true_abilities.csv", |b| io::write_thetas(b, &thetas, None))
        .context("writing true_abilities.csv")?;
    let mut seeds = BTreeMap::new();
    seeds.insert("base".to_owned(), cond.base_seed);
    seeds.insert("theta".to_owned(), cond.theta_seed());
    for r in 1..=cond.n_replications {
        let s = cond.replication_seed(r, "responses");
        let data = generate_responses(&bank, &thetas, s).context(format!("generating replication {r}"))?;
        let name = format!("responses_r{r:03}.csv");
        let table = ResponseTable::with_default_names(data);
        out.write(&name, |b| io::write_responses(b, &table))
            .context(format!("writing {name}"))?;
        seeds.insert(format!("responses_r{r:03}"), s);
    }
    info!("wrote {} dataset(s) for {} to {}", cond.n_replications, cond.id(), out.root().display());
    out.finish("simulate", config, seeds, &[]).context("writing manifest")?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    name: &'a str,
    mean: f64,
    sd: f64,
    q05: f64,
    q95: f64,
    psrf: f64,
}

#[derive(Serialize)]
struct TraceRow {
    cycle: usize,
    loglik: f64,
}

#[derive(Serialize)]
struct MmleInfo<'a> {
    converged: bool,
    n_cycles: usize,
    final_loglik: f64,
    collapses: &'a [gpcm::mmle::CategoryCollapse],
}

#[derive(Serialize)]
struct McmcInfo<'a> {
    seed: u64,
    n_retries: usize,
    worst_psrf: f64,
    worst_parameter: &'a str,
    accept_rate: &'a [f64],
    step_size: &'a [f64],
}

fn write_mmle(out: &mut OutputDir, fit: &MmleFit, eap: &gpcm::mmle::EapScores) -> CliResult<()> {
    out.write("mmle_items.csv", |b| io::write_items(b, &fit.bank_hat))
        .context("writing mmle_items.csv")?;
    out.write("mmle_abilities.csv", |b| io::write_thetas(b, &eap.theta, Some(&eap.sd)))
        .context("writing mmle_abilities.csv")?;
    let trace: Vec<TraceRow> = fit
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, &loglik)| TraceRow { cycle: i + 1, loglik })
        .collect();
    csv_file(out, "mmle_trace.csv", &trace)?;
    json_file(
        out,
        "mmle_fit.json",
        &MmleInfo {
            converged: fit.converged,
            n_cycles: fit.n_cycles,
            final_loglik: fit.final_loglik(),
            collapses: &fit.collapses,
        },
    )
}

fn write_mcmc(out: &mut OutputDir, fit: &McmcFit, seed: u64, draws: bool) -> CliResult<()> {
    let summaries = posterior_summaries(&fit.draws).context("summarizing draws")?;
    let rows: Vec<SummaryRow> = summaries
        .iter()
        .zip(&fit.psrf)
        .map(|(s, &psrf)| SummaryRow {
            name: &s.name,
            mean: s.mean,
            sd: s.sd,
            q05: s.q05,
            q95: s.q95,
            psrf,
        })
        .collect();
    csv_file(out, "mcmc_summary.csv", &rows)?;
    let theta_sd: Vec<f64> = summaries
        .iter()
        .filter(|s| s.name.starts_with("theta["))
        .map(|s| s.sd)
        .collect();
    out.write("mcmc_items.csv", |b| io::write_items(b, &fit.bank_hat))
        .context("writing mcmc_items.csv")?;
    out.write("mcmc_abilities.csv", |b| io::write_thetas(b, &fit.theta_hat, Some(&theta_sd)))
        .context("writing mcmc_abilities.csv")?;
    if draws {
        out.write("mcmc_draws.csv", |b| fit.draws.write_csv(b))
            .context("writing mcmc_draws.csv")?;
    }
    let (worst_parameter, worst_psrf) = fit.worst_psrf();
    json_file(
        out,
        "mcmc_fit.json",
        &McmcInfo {
            seed,
            n_retries: fit.n_retries,
            worst_psrf,
            worst_parameter: &worst_parameter,
            accept_rate: &fit.accept_rate,
            step_size: &fit.step_size,
        },
    )
}

fn write_comparison(out: &mut OutputDir, report: &ComparisonReport) -> CliResult<()> {
    csv_file(out, "compare_params.csv", &report.params)?;
    json_file(
        out,
        "compare_summary.json",
        &serde_json::json!({
            "n_persons": report.n_persons,
            "ability_mean_diff": report.ability_mean_diff,
            "ability_sd_diff": report.ability_sd_diff,
            "ability_max_abs_diff": report.ability_max_abs_diff,
            "ability_correlation": report.ability_correlation,
        }),
    )
}

fn cmd_fit(config: &mut RunConfig, a: FitArgs) -> CliResult<()> {
    if let Some(d) = a.data {
        config.data = Some(d);
    }
    if let Some(m) = a.method {
        config.method = Some(m);
    }
    if let Some(s) = a.seed {
        config.hmc.seed = s;
    }
    if let Some(c) = &a.categories {
        let m = c
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| usage(format!("--categories must be comma-separated integers, got {c:?}")))?;
        config.categories = Some(m);
    }
    let data_path = config
        .data
        .clone()
        .ok_or_else(|| usage("fit needs --data or a config with \"data\""))?;
    let method = *config.method.get_or_insert(Method::Both);
    let mut out = out_dir(config, a.out, "gpcm-fit")?;
    let table = io::read_response_csv(&data_path, config.categories.as_deref())
        .context(format!("reading {}", data_path.display()))?;
    let data = &table.matrix;
    let m = data.n_categories().to_vec();
    info!("{} persons, {} items, categories {:?}", data.n_persons(), data.n_items(), m);

    let mut seeds = BTreeMap::new();
    let mut mmle_est = None;
    if matches!(method, Method::Mmle | Method::Both) {
        let fit = fit_mmle(data, &m, &config.em).context("fitting MMLE")?;
        if !fit.converged {
            log::warn!("EM stopped after {} cycles without meeting the tolerance", fit.n_cycles);
        }
        let scored = apply_collapses(data, &fit.collapses).context("recoding collapsed categories")?;
        let eap = eap_abilities(&scored, &fit.bank_hat, &config.em.grid).context("scoring EAP abilities")?;
        write_mmle(&mut out, &fit, &eap)?;
        mmle_est = Some(Estimates::from_mmle(&fit, &eap));
    }
    if matches!(method, Method::Mcmc | Method::Both) {
        let fit = fit_mcmc(data, &m, &config.prior, &config.hmc).context("fitting MCMC")?;
        seeds.insert("mcmc".to_owned(), config.hmc.seed);
        write_mcmc(&mut out, &fit, config.hmc.seed, a.draws)?;
        if let Some(first) = &mmle_est {
            let report = compare_estimates(first, &Estimates::from_mcmc(&fit)).context("comparing estimates")?;
            info!(
                "MMLE vs MCMC abilities: correlation {:.4}, mean difference {:.4}",
                report.ability_correlation, report.ability_mean_diff
            );
            write_comparison(&mut out, &report)?;
        }
    }
    out.finish("fit", config, seeds, &[data_path.as_path()])
        .context("writing manifest")?;
    Ok(())
}

fn cmd_recover(config: &mut RunConfig, a: RecoverArgs) -> CliResult<()> {
    if a.full_design {
        if !a.condition.is_empty() {
            return Err(usage("--full-design and --condition are mutually exclusive"));
        }
        config.conditions = SimCondition::full_design(a.replications.unwrap_or(100), a.seed.unwrap_or(DEFAULT_SEED))
            .context("building the full design")?;
        config.method.get_or_insert(Method::Both);
    } else {
        resolve_conditions(config, &a.condition, a.seed, a.replications)?;
    }
    if config.conditions.is_empty() {
        return Err(usage("recover needs --condition, --full-design or conditions in the config"));
    }
    if let Some(m) = a.method {
        config.method = Some(m);
    }
    let estimators = config.method.get_or_insert(Method::Both).estimators();
    let mut out = out_dir(config, a.out, "gpcm-recover")?;
    let settings = config.settings();
    let reports = config
        .conditions
        .par_iter()
        .map(|c| run_condition(c, &estimators, &settings).map_err(|e| (c.id(), e)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|(id, source)| CliError {
            context: format!("running condition {id}"),
            source,
        })?;
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    let mut seeds = BTreeMap::new();
    for r in reports {
        seeds.insert(format!("{}.base", r.condition.id()), r.condition.base_seed);
        seeds.insert(format!("{}.theta", r.condition.id()), r.condition.theta_seed());
        records.extend(r.records);
        outcomes.extend(r.outcomes);
        summaries.extend(r.summaries);
    }
    csv_file(&mut out, "tidy.csv", &records)?;
    csv_file(&mut out, "summary.csv", &summaries)?;
    csv_file(&mut out, "fits.csv", &outcomes)?;
    out.finish("recover", config, seeds, &[]).context("writing manifest")?;
    Ok(())
}

fn read_estimates(items: &Path, abilities: &Path) -> CliResult<Estimates> {
    let bank = fs::File::open(items)
        .map_err(GpcmError::from)
        .and_then(io::parse_items)
        .context(format!("reading {}", items.display()))?;
    let thetas: ThetaVector = fs::File::open(abilities)
        .map_err(GpcmError::from)
        .and_then(io::parse_thetas)
        .context(format!("reading {}", abilities.display()))?;
    Ok(Estimates { bank, thetas })
}

fn cmd_compare(config: &mut RunConfig, a: CompareArgs) -> CliResult<()> {
    let first = read_estimates(&a.first_items, &a.first_abilities)?;
    let second = read_estimates(&a.second_items, &a.second_abilities)?;
    let report = compare_estimates(&first, &second).context("comparing estimates")?;
    let mut out = out_dir(config, a.out, "gpcm-compare")?;
    write_comparison(&mut out, &report)?;
    let inputs = [
        a.first_items.as_path(),
        a.first_abilities.as_path(),
        a.second_items.as_path(),
        a.second_abilities.as_path(),
    ];
    out.finish("compare", config, BTreeMap::new(), &inputs)
        .context("writing manifest")?;
    Ok(())
}

fn cmd_report(config: &mut RunConfig, a: ReportArgs) -> CliResult<()> {
    let records: Vec<TidyRecord> = fs::File::open(&a.tidy)
        .map_err(GpcmError::from)
        .and_then(io::read_rows)
        .context(format!("reading {}", a.tidy.display()))?;
    let mut summaries = summarize_records(&records);
    let mut inputs = vec![a.tidy.as_path()];
    if let Some(f) = &a.fits {
        let outcomes: Vec<FitOutcome> = fs::File::open(f)
            .map_err(GpcmError::from)
            .and_then(io::read_rows)
            .context(format!("reading {}", f.display()))?;
        for s in &mut summaries {
            s.n_excluded = outcomes
                .iter()
                .filter(|o| o.condition_id == s.condition_id && o.estimator == s.estimator && !o.included)
                .count();
        }
        inputs.push(f.as_path());
    }
    let mut out = out_dir(config, a.out, "gpcm-report")?;
    csv_file(&mut out, "summary.csv", &summaries)?;
    out.finish("report", config, BTreeMap::new(), &inputs)
        .context("writing manifest")?;
    Ok(())
}
