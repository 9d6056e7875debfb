use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shiftwise::agents::{
    forecast_availability, forecast_usage, recommend, typical_profile, ModelConfig,
};
use shiftwise::eval::output::{
    write_agent_scores_csv, write_coldstart_csv, write_curves_csv, write_json, write_recommendations,
    write_recommendations_csv, write_report_csv, write_sensitivity_csv,
};
use shiftwise::eval::{
    aggregate_report, attach_recommendations, generate_synthetic, grid_search, run_cold_start,
    run_forecasts, score_agents, DateRange, SavingsScope, Scenario, Stability,
};
use shiftwise::ingest::{parse_consumption, parse_prices, HouseholdConfig, IngestError};
use shiftwise::learn::MseNormalization;
use shiftwise::prepare::{prepare_household, PrepareError, PreparedDataset};
use shiftwise::Thresholds;

const CACHE_ENV: &str = "SHIFTWISE_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".shiftwise-cache";

#[derive(Parser)]
#[command(name = "shiftwise", version, about = "Day-ahead load-shifting recommendations")]
struct Cli {
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and prepare a household and cache the result.
    Ingest(DataArgs),
    /// Recommendations for one day.
    Recommend(RecommendArgs),
    /// Replay the pipeline and write the household report.
    Evaluate(EvaluateArgs),
    /// Cold-start curves and days until scores settle.
    Coldstart(ColdstartArgs),
    /// Threshold grid search and sensitivity table.
    Gridsearch(GridArgs),
    /// Generate a synthetic household and evaluate it.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = CACHE_ENV, default_value = DEFAULT_CACHE_DIR)]
    cache_dir: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long = "availability-th", default_value_t = 0.5)]
    availability: f64,
    #[arg(long = "usage-th", default_value_t = 0.125)]
    usage: f64,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.availability, self.usage).map_err(|e| input(e.to_string()))
    }
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
}

impl RangeArgs {
    fn range(&self) -> Result<DateRange> {
        if let (Some(f), Some(t)) = (self.from, self.to) {
            if f > t {
                return Err(input(format!("--from {f} is after --to {t}")));
            }
        }
        Ok(DateRange::new(self.from, self.to))
    }
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    date: NaiveDate,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, default_value = "shiftwise-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MseVariant {
    /// Divide by k + 1.
    VectorLength,
    /// Divide by k.
    DurationK,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    All,
    Acceptable,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, value_enum, default_value = "vector-length")]
    mse_variant: MseVariant,
    #[arg(long, value_enum, default_value = "all")]
    savings_scope: Scope,
}

impl MetricArgs {
    fn mse(&self) -> MseNormalization {
        match self.mse_variant {
            MseVariant::VectorLength => MseNormalization::VectorLength,
            MseVariant::DurationK => MseNormalization::DurationK,
        }
    }

    fn scope(&self) -> SavingsScope {
        match self.savings_scope {
            Scope::All => SavingsScope::AllEligible,
            Scope::Acceptable => SavingsScope::AcceptableOnly,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long, default_value = "shiftwise-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ColdstartArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.15)]
    tolerance: f64,
    /// Read the AUC tolerance as relative to the best score.
    #[arg(long)]
    relative: bool,
    #[arg(long, default_value = "shiftwise-out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, value_delimiter = ',')]
    availability_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    usage_grid: Option<Vec<f64>>,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long, default_value = "shiftwise-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "dip")]
    scenario: Scenario,
    #[arg(long, default_value_t = 365)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, default_value = "shiftwise-out")]
    out: PathBuf,
}

/// A problem with the user's inputs rather than with the program.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let user = err.chain().any(|e| {
        e.is::<InputError>() || e.is::<IngestError>() || e.is::<PrepareError>()
    });
    if user {
        2
    } else {
        1
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    dataset: PreparedDataset,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

/// Hash of the crate version, the config file and every input it names.
fn cache_key(config_path: &Path, config: &HouseholdConfig) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
    for path in [config_path, &config.consumption_file, &config.price_file] {
        let bytes = read_input(path)?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn ingest(config_path: &Path, config: &HouseholdConfig) -> Result<PreparedDataset> {
    let consumption = parse_consumption(&config.consumption_file, config)?;
    let prices = parse_prices(&config.price_file, config.price_unit)?;
    prepare_household(config, &consumption, prices)
        .with_context(|| format!("preparing {}", config_path.display()))
}

/// Prepared dataset from the cache, ingesting first when no entry matches.
fn load_dataset(args: &DataArgs) -> Result<(PreparedDataset, PathBuf, bool)> {
    let config = HouseholdConfig::load(&args.config)?;
    let key = cache_key(&args.config, &config)?;
    let path = args.cache_dir.join(format!("{key}.json"));
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(entry) = serde_json::from_slice::<CacheEntry>(&bytes) {
            if entry.key == key {
                return Ok((entry.dataset, path, true));
            }
        }
    }
    let dataset = ingest(&args.config, &config)?;
    fs::create_dir_all(&args.cache_dir)
        .with_context(|| format!("creating {}", args.cache_dir.display()))?;
    let entry = CacheEntry { key, dataset };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&entry)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok((entry.dataset, path, false))
}

fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn cmd_ingest(args: &DataArgs) -> Result<()> {
    let (data, path, cached) = load_dataset(args)?;
    let mut out = io::stdout().lock();
    writeln!(out, "household: {}", data.household)?;
    writeln!(out, "cache: {} ({})", path.display(), if cached { "hit" } else { "written" })?;
    let dates = data.usable_dates();
    writeln!(
        out,
        "coverage: {} to {} ({} days, {} usable, {} excluded)",
        data.matrix.first_date().map_or("-".into(), |d| d.to_string()),
        data.matrix.last_date().map_or("-".into(), |d| d.to_string()),
        data.matrix.len(),
        dates.len(),
        data.excluded_days.len()
    )?;
    let s = &data.stats;
    writeln!(
        out,
        "readings: {} rows, {} malformed, {} stepped back; {} hours zero-filled, {} hours missing",
        s.rows_read, s.malformed_rows, s.backward_rows, s.hours_zero_filled, s.hours_missing
    )?;
    writeln!(
        out,
        "prices: {} hours ({}), {} interpolated, {} unfilled gaps",
        data.prices.len(),
        data.prices.source_unit,
        data.prices.interpolated.len(),
        data.prices.unfilled_gaps.len()
    )?;
    for d in &data.devices {
        let role = serde_json::to_value(d.role)?;
        match d.duration_k {
            Some(k) if d.role.is_shiftable() => writeln!(
                out,
                "device {}: {} k={k} runs={}",
                d.id,
                role.as_str().unwrap_or_default(),
                data.runs_for(&d.id).len()
            )?,
            _ => writeln!(out, "device {}: {}", d.id, role.as_str().unwrap_or_default())?,
        }
    }
    Ok(())
}

fn cmd_recommend(args: &RecommendArgs) -> Result<()> {
    let thresholds = args.thresholds.thresholds()?;
    let (data, _, _) = load_dataset(&args.data)?;
    let date = args.date;
    let (Some(first), Some(last)) = (data.matrix.first_date(), data.matrix.last_date()) else {
        return Err(input("no covered days"));
    };
    if date <= first || date > last + Duration::days(1) {
        return Err(input(format!(
            "date {date} outside coverage; choose a day from {} to {}",
            first + Duration::days(1),
            last + Duration::days(1)
        )));
    }
    if (0..24).all(|h| {
        shiftwise::HourStamp::new(date, h).map_or(true, |s| data.prices.get(s).is_none())
    }) {
        return Err(input(format!("no prices for {date}")));
    }

    let cfg = ModelConfig::default();
    let availability = forecast_availability(&data.matrix, &data.excluded_days, date, &cfg);
    let mut profiles = std::collections::BTreeMap::new();
    let mut usage = std::collections::BTreeMap::new();
    for spec in data.shiftable_devices() {
        if let Ok(p) = typical_profile(data.runs_for(&spec.id), date, spec.resolved_k()?) {
            profiles.insert(spec.id.clone(), p);
        }
        let f = forecast_usage(&data.usage_targets, &data.matrix, &data.excluded_days, &spec.id, date, &cfg);
        usage.insert(spec.id.clone(), f);
    }
    let outcome = recommend(date, &data.devices, &thresholds, &profiles, &data.prices, &availability, &usage);

    let mut stdout = io::stdout().lock();
    write_recommendations(&mut stdout, &outcome.recommendations)?;
    for s in &outcome.skipped {
        let reason = serde_json::to_value(&s.reason)?;
        eprintln!("skipped {}: {}", s.device, reason.as_str().unwrap_or_default());
    }
    let dir = out_dir(&args.out)?;
    write_recommendations_csv(&dir.join(format!("recommendations_{date}.csv")), &outcome.recommendations)?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let thresholds = args.thresholds.thresholds()?;
    let range = args.range.range()?;
    let (data, _, _) = load_dataset(&args.data)?;
    let forecasts = run_forecasts(&data, range, &ModelConfig::default());
    if forecasts.days.is_empty() {
        return Err(input("no usable days in the requested range"));
    }
    let recs = attach_recommendations(&data, &forecasts, thresholds);
    let scores = score_agents(&data, &forecasts, args.metrics.mse());
    let report = aggregate_report(&data, &recs, &scores, args.metrics.scope());

    let dir = out_dir(&args.out)?;
    write_report_csv(&dir.join("report.csv"), std::slice::from_ref(&report))?;
    write_agent_scores_csv(&dir.join("agent_scores.csv"), std::slice::from_ref(&report))?;
    write_recommendations_csv(&dir.join("recommendations.csv"), &recs.recommendations)?;
    write_json(&dir.join("report.json"), &report)?;
    print_report_summary(&report);
    Ok(())
}

fn print_report_summary(report: &shiftwise::eval::HouseholdReport) {
    use shiftwise::eval::output::fmt_metric;
    let m = &report.metrics;
    println!("household: {}", report.household);
    println!(
        "thresholds: availability {} usage {}",
        report.thresholds.availability, report.thresholds.usage
    );
    println!("availability auc: {}", fmt_metric(report.availability_auc));
    for (d, v) in &report.usage_auc {
        println!("usage auc {d}: {}", fmt_metric(*v));
    }
    for (d, v) in &report.load_mse {
        println!("load mse {d}: {}", fmt_metric(*v));
    }
    println!(
        "recommendations: {} (acceptable rate {})",
        m.n_recommendations,
        fmt_metric(m.acceptable_rate)
    );
    println!(
        "savings: total {} relative {}",
        m.total_savings,
        fmt_metric(m.relative_savings)
    );
}

fn cmd_coldstart(args: &ColdstartArgs) -> Result<()> {
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(input("--tolerance must be non-negative"));
    }
    let (data, _, _) = load_dataset(&args.data)?;
    let stability = if args.relative { Stability::AucRelative } else { Stability::AucAbsolute };
    let report = run_cold_start(&data, args.tolerance, stability, &ModelConfig::default())
        .map_err(|e| input(e.to_string()))?;
    let dir = out_dir(&args.out)?;
    write_coldstart_csv(&dir.join("coldstart.csv"), &report.household, &report.result)?;
    write_curves_csv(&dir.join("coldstart_curves.csv"), &report.curves)?;
    write_json(&dir.join("coldstart.json"), &report)?;
    print!("{}", fs::read_to_string(dir.join("coldstart.csv"))?);
    Ok(())
}

fn cmd_gridsearch(args: &GridArgs) -> Result<()> {
    let range = args.range.range()?;
    let (data, _, _) = load_dataset(&args.data)?;
    let default = shiftwise::eval::default_grid();
    let a_grid = args.availability_grid.clone().unwrap_or_else(|| default.clone());
    let u_grid = args.usage_grid.clone().unwrap_or(default);
    let forecasts = run_forecasts(&data, range, &ModelConfig::default());
    if forecasts.days.is_empty() {
        return Err(input("no usable days in the requested range"));
    }
    let result = grid_search(&data, &forecasts, &a_grid, &u_grid, args.metrics.scope())
        .map_err(|e| input(e.to_string()))?;
    let recs = attach_recommendations(&data, &forecasts, result.best);
    let scores = score_agents(&data, &forecasts, args.metrics.mse());
    let report = aggregate_report(&data, &recs, &scores, args.metrics.scope());

    let dir = out_dir(&args.out)?;
    write_sensitivity_csv(&dir.join("sensitivity.csv"), &result.table)?;
    write_json(&dir.join("gridsearch.json"), &result)?;
    write_report_csv(&dir.join("report.csv"), std::slice::from_ref(&report))?;
    write_json(&dir.join("report.json"), &report)?;
    print_report_summary(&report);
    Ok(())
}

fn cmd_synth(args: &SynthArgs, cache_dir: &Path) -> Result<()> {
    let thresholds = args.thresholds.thresholds()?;
    let cfg = args.scenario.config(args.days);
    let synth = generate_synthetic(args.seed, &cfg).map_err(|e| input(e.to_string()))?;
    let dir = out_dir(&args.out)?;
    let config_path = synth.write_files(&dir.join("data"))?;
    let eval = EvaluateArgs {
        data: DataArgs {
            config: config_path,
            cache_dir: cache_dir.to_path_buf(),
        },
        range: RangeArgs { from: None, to: None },
        thresholds: ThresholdArgs {
            availability: thresholds.availability,
            usage: thresholds.usage,
        },
        metrics: MetricArgs {
            mse_variant: MseVariant::VectorLength,
            savings_scope: Scope::All,
        },
        out: dir.to_path_buf(),
    };
    cmd_evaluate(&eval)?;
    write_json(&dir.join("expected.json"), &synth.expected)?;
    println!(
        "expected: best hour {} relative savings {}",
        synth.expected.best_hour.map_or("none".into(), |h| h.to_string()),
        synth.expected.relative_savings
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(input("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow!(e))?;
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Coldstart(a) => cmd_coldstart(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Synth(a) => {
            let cache = std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from);
            cmd_synth(a, &cache)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
