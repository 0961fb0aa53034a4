//! Command-line front end: trace synthesis, single simulations, node-count
//! sweeps, and trace validation. All randomness flows from `--seed`; errors
//! print machine-readable JSON on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use elastic_sched::domain::ClusterConfig;
use elastic_sched::experiments::{
    run_experiment, ComparisonReport, ExperimentSpec, Scenario, TraceSource,
};
use elastic_sched::greedy::TrainingTimeMetric;
use elastic_sched::sim::{self, AllocatorKind, SimulationConfig};
use elastic_sched::solver::SolverBudget;
use elastic_sched::workload::{self, SyntheticProfile};

#[derive(Parser)]
#[command(
    name = "elastic-sched",
    about = "Elastic-training node allocation: trace synthesis, simulation, and allocator comparison",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a job trace from a workload profile.
    Generate(GenerateArgs),
    /// Run one simulation of a trace under a single allocator.
    Simulate(SimulateArgs),
    /// Run an experiment sweep described by a config file.
    Sweep(SweepArgs),
    /// Check a trace file against every format and domain invariant.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileName {
    Baseline,
    Heterogeneous,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocatorArg {
    Optimal,
    Greedy,
}

impl From<AllocatorArg> for AllocatorKind {
    fn from(a: AllocatorArg) -> Self {
        match a {
            AllocatorArg::Optimal => AllocatorKind::Optimal,
            AllocatorArg::Greedy => AllocatorKind::Greedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Elapsed,
    RemainingEta,
}

impl From<MetricArg> for TrainingTimeMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Elapsed => TrainingTimeMetric::Elapsed,
            MetricArg::RemainingEta => TrainingTimeMetric::RemainingEta,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    profile: ProfileName,
    #[arg(long)]
    seed: u64,
    /// Output trace path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    /// Mean arrivals per hour.
    #[arg(long)]
    arrival_rate: Option<f64>,
    /// Mean long-job duration in minutes.
    #[arg(long)]
    large_mean_min: Option<f64>,
    #[arg(long)]
    large_sigma: Option<f64>,
    #[arg(long)]
    small_fraction: Option<f64>,
    #[arg(long)]
    small_cutoff_min: Option<f64>,
    #[arg(long)]
    n_min: Option<u32>,
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long)]
    bug_fraction: Option<f64>,
    #[arg(long)]
    terminate_fraction: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 70)]
    nodes: u32,
    #[arg(long, value_enum, default_value = "optimal")]
    allocator: AllocatorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds between allocator activations.
    #[arg(long, default_value_t = 300)]
    epoch_period: u64,
    #[arg(long, default_value_t = 5)]
    horizon_steps: usize,
    #[arg(long, default_value_t = 0)]
    scaling_delay: u64,
    /// Relative half-width of the ETA disturbance.
    #[arg(long, default_value_t = 0.0)]
    disturbance: f64,
    /// Fraction of jobs the disturbance applies to.
    #[arg(long, default_value_t = 1.0)]
    disturbed_fraction: f64,
    #[arg(long, value_enum, default_value = "elapsed")]
    greedy_metric: MetricArg,
    /// Solver node budget per epoch (deterministic cap).
    #[arg(long, default_value_t = 50_000)]
    node_limit: u64,
    /// Stop the run at this simulated second instead of draining.
    #[arg(long)]
    horizon_end: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config mirroring the experiment spec (see README).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
}

/// Flat key-value sweep configuration.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    /// Path to an explicit trace; mutually exclusive with `profile`.
    trace: Option<String>,
    /// `baseline` or `heterogeneous`.
    profile: Option<String>,
    seed: u64,
    node_counts: Vec<u32>,
    allocators: Vec<String>,
    scenario: String,
    #[serde(default = "default_replications")]
    replications: usize,
    #[serde(default = "default_epoch_period")]
    epoch_period_s: u64,
    #[serde(default = "default_horizon_steps")]
    horizon_steps: usize,
    #[serde(default)]
    scaling_delay_s: u64,
    #[serde(default = "default_node_limit")]
    node_limit: u64,
    #[serde(default = "default_greedy_metric")]
    greedy_metric: String,
}

fn default_replications() -> usize {
    1
}
fn default_epoch_period() -> u64 {
    300
}
fn default_horizon_steps() -> usize {
    5
}
fn default_node_limit() -> u64 {
    50_000
}
fn default_greedy_metric() -> String {
    "elapsed".into()
}

fn profile_from_args(args: &GenerateArgs) -> SyntheticProfile {
    let mut profile = match args.profile {
        ProfileName::Baseline => SyntheticProfile::baseline(),
        ProfileName::Heterogeneous => SyntheticProfile::heterogeneous(),
    };
    if let Some(v) = args.count {
        profile.count = v;
    }
    if let Some(v) = args.arrival_rate {
        profile.arrival_rate_per_hour = v;
    }
    if let Some(v) = args.large_mean_min {
        profile.large_mean_minutes = v;
    }
    if let Some(v) = args.large_sigma {
        profile.large_sigma = v;
    }
    if let Some(v) = args.small_fraction {
        profile.small_fraction = v;
    }
    if let Some(v) = args.small_cutoff_min {
        profile.small_cutoff_minutes = v;
    }
    if let Some(v) = args.n_min {
        profile.n_min = v;
    }
    if let Some(v) = args.n_max {
        profile.n_max = v;
    }
    if let Some(v) = args.bug_fraction {
        profile.bug_fraction = v;
    }
    if let Some(v) = args.terminate_fraction {
        profile.terminate_fraction = v;
    }
    profile
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let profile = profile_from_args(&args);
    let jobs = workload::generate(&profile, args.seed)?;
    workload::write_trace_file(&args.out, &jobs)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} jobs to {}", jobs.len(), args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let trace = workload::load_trace_file(&args.trace)
        .with_context(|| format!("loading {}", args.trace.display()))?;
    let config = SimulationConfig {
        cluster: ClusterConfig {
            total_nodes: args.nodes,
            epoch_period_s: args.epoch_period,
            horizon_steps: args.horizon_steps,
            scaling_delay_s: args.scaling_delay,
            eta_disturbance: args.disturbance,
            rng_seed: args.seed,
            ..ClusterConfig::default()
        },
        allocator: args.allocator.into(),
        budget: SolverBudget::deterministic(args.node_limit),
        greedy_metric: args.greedy_metric.into(),
        disturbed_fraction: args.disturbed_fraction,
        bug_fraction: 0.0,
        terminate_fraction: 0.0,
        horizon_end_s: args.horizon_end,
    };
    let report = sim::run(&trace, &config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("report.json"), report.to_json())?;
    std::fs::write(args.out_dir.join("jobs.csv"), report.jobs_csv())?;
    println!(
        "simulated {} jobs on {} nodes ({}): {} completed, {} failed, mean queue {:.2} min, mean total {:.2} min",
        report.records.len(),
        args.nodes,
        config.allocator,
        report.completed_count(),
        report.failed_count(),
        report.mean_queue_minutes(),
        report.mean_total_minutes(),
    );
    println!("wrote report.json and jobs.csv to {}", args.out_dir.display());
    Ok(())
}

fn spec_from_config(config: &SweepConfig, config_dir: &Path) -> Result<ExperimentSpec> {
    let source = match (&config.trace, &config.profile) {
        (Some(_), Some(_)) => bail!("config sets both `trace` and `profile`"),
        (Some(path), None) => {
            let resolved = config_dir.join(path);
            TraceSource::Explicit(workload::load_trace_file(&resolved).with_context(
                || format!("loading trace {}", resolved.display()),
            )?)
        }
        (None, Some(name)) => TraceSource::Profile(match name.as_str() {
            "baseline" => SyntheticProfile::baseline(),
            "heterogeneous" => SyntheticProfile::heterogeneous(),
            other => bail!("unknown profile `{other}`"),
        }),
        (None, None) => bail!("config needs `trace` or `profile`"),
    };
    let allocators = config
        .allocators
        .iter()
        .map(|name| match name.as_str() {
            "optimal" => Ok(AllocatorKind::Optimal),
            "greedy" => Ok(AllocatorKind::Greedy),
            other => bail!("unknown allocator `{other}`"),
        })
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario::parse(&config.scenario)
        .ok_or_else(|| anyhow::anyhow!("unknown scenario `{}`", config.scenario))?;
    let greedy_metric = match config.greedy_metric.as_str() {
        "elapsed" => TrainingTimeMetric::Elapsed,
        "remaining_eta" => TrainingTimeMetric::RemainingEta,
        other => bail!("unknown greedy metric `{other}`"),
    };
    Ok(ExperimentSpec {
        source,
        seed: config.seed,
        node_counts: config.node_counts.clone(),
        allocators,
        scenario,
        replications: config.replications,
        epoch_period_s: config.epoch_period_s,
        horizon_steps: config.horizon_steps,
        scaling_delay_s: config.scaling_delay_s,
        budget: SolverBudget::deterministic(config.node_limit),
        greedy_metric,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: &'a str,
    config: &'a SweepConfig,
    seed: u64,
    report: &'a ComparisonReport,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config: SweepConfig = toml::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    let config_dir = args.config.parent().unwrap_or(Path::new("."));
    let spec = spec_from_config(&config, config_dir)?;
    let report = run_experiment(&spec)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let out = |name: &str, data: String| -> Result<()> {
        std::fs::write(args.out_dir.join(name), data)?;
        Ok(())
    };
    out("queueing_vs_nodes.csv", report.queueing_csv())?;
    out("total_time_vs_nodes.csv", report.total_time_csv())?;
    out("additional_jobs.csv", report.additional_jobs_csv())?;
    out("latency_histogram.csv", report.latency_histogram_csv())?;
    let manifest = Manifest {
        schema_version: "manifest-v1",
        config: &config,
        seed: config.seed,
        report: &report,
    };
    out("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "sweep done: {} cells over {} node counts; outputs in {}",
        report.cells.len(),
        spec.node_counts.len(),
        args.out_dir.display()
    );
    for cell in &report.cells {
        println!(
            "  N={:<4} {:<8} queue {:>8.2} min  total {:>8.2} min  completed {:>6.0}",
            cell.node_count,
            cell.allocator.to_string(),
            cell.mean_queue_minutes,
            cell.mean_total_minutes,
            cell.completed
        );
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let jobs = workload::load_trace_file(&args.trace)
        .with_context(|| format!("validating {}", args.trace.display()))?;
    for job in &jobs {
        job.validate()?;
    }
    println!("{}: {} jobs, all invariants hold", args.trace.display(), jobs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
