//! `mibo`: Bayesian optimization over mixed continuous/integer spaces.
//!
//! Subcommands: `bench` compares strategies on synthetic objectives and
//! writes regret curves; `run` performs one optimization (builtin, inline,
//! or external subprocess objective) with crash-resumable record files;
//! `sample-objective` draws a synthetic objective and dumps its grid.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

mod config;
mod external;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mibo::bench::{self, ExperimentSpec};
use mibo::driver::{self, BoConfig, DriverError, NoisePolicy, Strategy};
use mibo::kernel::KernelFamily;
use mibo::space::Point;
use mibo::{derive_seed, stream_from_seed};

use config::{
    build_space, default_iterations, load_config, parse_kernel, parse_noise, parse_strategy,
    BenchConfigFile, NamedSpace, ResolvedObjective, RunConfigFile, RunObjective, SampleConfigFile,
};

/// Stream salt reserved for drawing synthetic objectives, so `run` and
/// `sample-objective` with the same seed see the same function.
const OBJECTIVE_DRAW_SALT: u64 = 0x6f62_6a65_6374_6976;

#[derive(Debug)]
pub enum CliError {
    /// Bad config file or option values; exit code 1.
    Config(String),
    /// Failure while executing a valid config; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mibo",
    version,
    about = "Bayesian optimization over mixed continuous/integer spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare strategies on a synthetic objective and write regret curves.
    Bench(BenchArgs),
    /// Run a single optimization; resumes from its record file if present.
    Run(RunArgs),
    /// Draw a synthetic objective and write its grid as CSV.
    SampleObjective(SampleArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// JSON benchmark config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the number of model-guided iterations per run.
    #[arg(long)]
    iters: Option<usize>,
    /// Run only this strategy.
    #[arg(long, value_name = "naive|basic|proposed")]
    strategy: Option<String>,
    /// Output directory for records.jsonl and curves.csv.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of model-guided iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Override the strategy.
    #[arg(long, value_name = "naive|basic|proposed")]
    strategy: Option<String>,
    /// Output directory for records.jsonl.
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// JSON objective config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, default_value = "objective.csv")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => cmd_bench(args),
        Command::Run(args) => cmd_run(args),
        Command::SampleObjective(args) => cmd_sample_objective(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

fn parse_strategies(
    flag: Option<&str>,
    from_config: Option<&[String]>,
) -> Result<Vec<Strategy>, CliError> {
    if let Some(one) = flag {
        return Ok(vec![parse_strategy("--strategy", one)?]);
    }
    match from_config {
        Some(list) => {
            if list.is_empty() {
                return Err(CliError::config("strategies: must not be empty"));
            }
            list.iter()
                .enumerate()
                .map(|(i, s)| parse_strategy(&format!("strategies[{i}]"), s))
                .collect()
        }
        None => Ok(Strategy::ALL.to_vec()),
    }
}

fn resolve_kernel(from_config: Option<&str>) -> Result<KernelFamily, CliError> {
    match from_config {
        Some(k) => parse_kernel("kernel", k),
        None => Ok(KernelFamily::Matern52),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let file: BenchConfigFile = load_config(&args.config)?;
    let objective: ResolvedObjective = config::resolve_synthetic("objective", &file.objective)?;
    let strategies = parse_strategies(args.strategy.as_deref(), file.strategies.as_deref())?;
    let kernel = resolve_kernel(file.kernel.as_deref())?;
    let repetitions = args.reps.or(file.repetitions).unwrap_or(20);
    if repetitions == 0 {
        return Err(CliError::config("repetitions: must be at least 1"));
    }
    let iterations = args
        .iters
        .or(file.iterations)
        .unwrap_or_else(|| default_iterations(&objective.label));
    let n_initial = file
        .n_initial
        .unwrap_or_else(|| BoConfig::default_n_initial(&objective.spec.space));
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let spec = ExperimentSpec {
        objective: objective.spec.clone(),
        strategies,
        kernel_family: kernel,
        n_repetitions: repetitions,
        n_iterations: iterations,
        n_initial,
        base_seed: seed,
    };
    // Schedule validity surfaces before any computation.
    BoConfig {
        strategy: Strategy::Proposed,
        kernel_family: kernel,
        noise: spec.objective.noise_policy(),
        n_initial,
        n_iterations: iterations,
        seed,
    }
    .validate()
    .map_err(|e| CliError::config(e.to_string()))?;

    ensure_dir(&args.out)?;
    let result = bench::run_experiment(&spec).map_err(|e| CliError::runtime(e.to_string()))?;

    for failure in &result.failures {
        eprintln!(
            "warning: {} repetition {} failed: {}",
            failure.strategy, failure.repetition, failure.message
        );
    }
    output::write_bench_records(&args.out.join("records.jsonl"), &result.records)?;
    let meta = output::CurveMetadata {
        objective: &objective,
        kernel,
        seed,
        repetitions,
        iterations,
        n_initial,
    };
    output::write_curves_csv(&args.out.join("curves.csv"), &meta, &result.curves)?;

    for curve in &result.curves {
        let last = curve
            .mean_log_regret
            .last()
            .expect("curves are never empty");
        let stderr = curve
            .stderr_log_regret
            .last()
            .expect("curves are never empty");
        println!(
            "{}: final mean log10 regret {} (stderr {}, {}/{} runs)",
            curve.strategy, last, stderr, curve.n_runs, repetitions
        );
    }
    Ok(())
}

fn incumbent_point(records: &[driver::TrialRecord]) -> Option<(&Point, f64)> {
    records
        .iter()
        .min_by(|a, b| a.observed.total_cmp(&b.observed))
        .map(|r| (&r.evaluated, r.observed))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let file: RunConfigFile = load_config(&args.config)?;
    let objective = config::resolve_run_objective("objective", &file.objective)?;

    // Synthetic objectives carry their own space; external commands need one.
    let (named_space, default_noise) = match &objective {
        RunObjective::Synthetic(resolved) => {
            if file.space.is_some() {
                return Err(CliError::config(
                    "space: omit when the objective defines its own space",
                ));
            }
            let named = NamedSpace {
                space: resolved.spec.space.clone(),
                names: resolved.names.clone(),
            };
            (named, resolved.spec.noise_policy())
        }
        RunObjective::External(_) => {
            let vars = file.space.as_deref().ok_or_else(|| {
                CliError::config("space: required for external-command objectives")
            })?;
            (build_space("space", vars)?, NoisePolicy::Noiseless)
        }
    };
    let space = named_space.space;

    let strategy = match args.strategy.as_deref().or(file.strategy.as_deref()) {
        Some(s) => parse_strategy("strategy", s)?,
        None => Strategy::Proposed,
    };
    let kernel = resolve_kernel(file.kernel.as_deref())?;
    let noise = match &file.noise {
        Some(v) => parse_noise("noise", v)?,
        None => default_noise,
    };
    let n_iterations = args.iters.or(file.iterations).unwrap_or(20);
    let n_initial = file
        .n_initial
        .unwrap_or_else(|| BoConfig::default_n_initial(&space));
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = BoConfig {
        strategy,
        kernel_family: kernel,
        noise,
        n_initial,
        n_iterations,
        seed,
    };
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;

    ensure_dir(&args.out)?;
    let records_path = args.out.join("records.jsonl");
    let (resumed, chain) = output::load_records(&records_path)?;
    if !resumed.is_empty() {
        println!(
            "resuming from {} with {} completed evaluations",
            records_path.display(),
            resumed.len()
        );
    }

    let mut objective: Box<dyn driver::Objective> = match objective {
        RunObjective::Synthetic(resolved) => {
            let mut rng = stream_from_seed(derive_seed(seed, OBJECTIVE_DRAW_SALT));
            let mut drawn = bench::make_objective(&resolved.spec, &mut rng)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            drawn.advance_noise(resumed.len());
            Box::new(drawn)
        }
        RunObjective::External(command) => Box::new(external::ExternalObjective::new(command)),
    };

    let mut sink = output::open_record_sink(&records_path)?;
    let outcome = driver::run_bo_with(
        objective.as_mut(),
        &space,
        &cfg,
        &resumed,
        chain.as_deref(),
        &mut |record, chain| output::append_record(&mut sink, record, chain),
    );
    let records = match outcome {
        Ok(records) => records,
        Err(DriverError::ObjectiveFailed {
            source,
            partial_records,
        }) => {
            return Err(CliError::runtime(format!(
                "{source} ({} completed evaluations saved in {})",
                partial_records.len(),
                records_path.display()
            )));
        }
        Err(e @ DriverError::InvalidConfig(_)) => return Err(CliError::config(e.to_string())),
        Err(e) => return Err(CliError::runtime(e.to_string())),
    };

    let (best_point, best_value) = incumbent_point(&records).expect("completed runs have records");
    let coords = best_point
        .coords()
        .iter()
        .zip(&named_space.names)
        .map(|(c, n)| format!("{n}={c}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!(
        "run complete: {} evaluations, incumbent {} at ({})",
        records.len(),
        best_value,
        coords
    );
    Ok(())
}

fn cmd_sample_objective(args: SampleArgs) -> Result<(), CliError> {
    let file: SampleConfigFile = load_config(&args.config)?;
    let objective = config::resolve_synthetic("objective", &file.objective)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut rng = stream_from_seed(derive_seed(seed, OBJECTIVE_DRAW_SALT));
    let drawn = bench::make_objective(&objective.spec, &mut rng)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    output::write_objective_csv(&args.out, &objective, seed, &drawn)?;
    println!(
        "sampled {} ({} grid points) to {}: true_min={}",
        objective.label,
        drawn.grid().len(),
        args.out.display(),
        drawn.true_min()
    );
    Ok(())
}
