//! Experiment runner: node-count sweeps, allocator head-to-heads, and
//! robustness scenarios over paired traces, with CSV/JSON reporting.
//!
//! Within one experiment every (node count, allocator, replication) cell
//! consumes the byte-identical trace and failure schedule, so differences
//! between allocators are attributable to their decisions alone. Cells are
//! independent and run through [`crate::par::map_cells`]; aggregation folds
//! them in a fixed order so the output does not depend on thread count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClusterConfig, JobId, JobSpec};
use crate::greedy::TrainingTimeMetric;
use crate::par;
use crate::sim::{self, AllocatorKind, SimError, SimulationConfig, SimulationReport};
use crate::solver::SolverBudget;
use crate::workload::{annotate_failures, generate, SyntheticProfile, TraceError};

pub const COMPARISON_SCHEMA_VERSION: &str = "comparison-v1";

/// Completion milestone used by the additional-trained-jobs metric.
pub const DEFAULT_MILESTONE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    Heterogeneous,
    Disturbance,
    Harsh,
    ScalingDelay,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "baseline" => Some(Scenario::Baseline),
            "heterogeneous" => Some(Scenario::Heterogeneous),
            "disturbance" => Some(Scenario::Disturbance),
            "harsh" => Some(Scenario::Harsh),
            "scaling_delay" => Some(Scenario::ScalingDelay),
            _ => None,
        }
    }
}

/// Where the experiment's jobs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceSource {
    Explicit(Vec<JobSpec>),
    Profile(SyntheticProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: TraceSource,
    pub seed: u64,
    pub node_counts: Vec<u32>,
    pub allocators: Vec<AllocatorKind>,
    pub scenario: Scenario,
    pub replications: usize,
    pub epoch_period_s: u64,
    pub horizon_steps: usize,
    pub scaling_delay_s: u64,
    pub budget: SolverBudget,
    pub greedy_metric: TrainingTimeMetric,
}

impl ExperimentSpec {
    /// Baseline comparison over the standard node sweep (70..=190 by 20).
    pub fn baseline_sweep(source: TraceSource, seed: u64) -> Self {
        ExperimentSpec {
            source,
            seed,
            node_counts: (70..=190).step_by(20).collect(),
            allocators: vec![AllocatorKind::Greedy, AllocatorKind::Optimal],
            scenario: Scenario::Baseline,
            replications: 1,
            epoch_period_s: 300,
            horizon_steps: 5,
            scaling_delay_s: 0,
            budget: SolverBudget::deterministic(50_000),
            greedy_metric: TrainingTimeMetric::Elapsed,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.node_counts.is_empty() {
            return Err(ExperimentError::Invalid("node_counts must be nonempty".into()));
        }
        if self.node_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ExperimentError::Invalid("node_counts must be ascending".into()));
        }
        if self.allocators.is_empty() {
            return Err(ExperimentError::Invalid("allocators must be nonempty".into()));
        }
        if self.replications == 0 {
            return Err(ExperimentError::Invalid("replications must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rep-averaged metrics for one (node count, allocator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub node_count: u32,
    pub allocator: AllocatorKind,
    pub mean_queue_minutes: f64,
    pub mean_total_minutes: f64,
    pub completed: f64,
    pub failed: f64,
    pub unfinished: f64,
}

/// Additional jobs the optimal allocator completed by the instants the
/// greedy one reached each completion milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneRow {
    pub node_count: u32,
    /// Per-milestone counts from the first replication.
    pub per_milestone: Vec<i64>,
    /// Mean of per-milestone means across replications.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    /// Median seconds to an incumbent within 5% of the bound.
    pub near_optimal_median_s: Option<f64>,
}

impl LatencyStats {
    pub fn from_samples(mut latency: Vec<f64>, mut near: Vec<f64>) -> Option<LatencyStats> {
        if latency.is_empty() {
            return None;
        }
        latency.sort_by(f64::total_cmp);
        near.sort_by(f64::total_cmp);
        let n = latency.len();
        let pick = |q: f64| latency[(((n - 1) as f64) * q).round() as usize];
        Some(LatencyStats {
            samples: n,
            mean_s: latency.iter().sum::<f64>() / n as f64,
            median_s: pick(0.5),
            p95_s: pick(0.95),
            max_s: latency[n - 1],
            near_optimal_median_s: if near.is_empty() {
                None
            } else {
                Some(near[(near.len() - 1) / 2])
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub cells: Vec<CellMetrics>,
    pub additional_trained: Vec<MilestoneRow>,
    pub latency: Option<LatencyStats>,
    /// Raw per-epoch wall-clock solver times across all optimal cells.
    pub latency_samples: Vec<f64>,
}

impl ComparisonReport {
    pub fn cell(&self, node_count: u32, allocator: AllocatorKind) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.node_count == node_count && c.allocator == allocator)
    }

    pub fn milestone_row(&self, node_count: u32) -> Option<&MilestoneRow> {
        self.additional_trained.iter().find(|m| m.node_count == node_count)
    }

    /// `node_count,allocator,mean_queue_minutes` rows.
    pub fn queueing_csv(&self) -> String {
        let mut out = String::from("node_count,allocator,mean_queue_minutes\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.4}\n",
                c.node_count, c.allocator, c.mean_queue_minutes
            ));
        }
        out
    }

    /// `node_count,allocator,mean_total_minutes` rows.
    pub fn total_time_csv(&self) -> String {
        let mut out = String::from("node_count,allocator,mean_total_minutes\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.4}\n",
                c.node_count, c.allocator, c.mean_total_minutes
            ));
        }
        out
    }

    /// `node_count,milestone,additional_jobs` rows, one per milestone.
    pub fn additional_jobs_csv(&self) -> String {
        let mut out = String::from("node_count,milestone,additional_jobs\n");
        for row in &self.additional_trained {
            for (i, &extra) in row.per_milestone.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    row.node_count,
                    (i + 1) * DEFAULT_MILESTONE,
                    extra
                ));
            }
        }
        out
    }

    /// Solver-latency histogram in 0.1 s buckets up to 3 s plus overflow.
    pub fn latency_histogram_csv(&self) -> String {
        let mut out = String::from("bucket_lo_s,bucket_hi_s,count\n");
        let mut buckets = vec![0usize; 31];
        for &s in &self.latency_samples {
            let b = ((s / 0.1) as usize).min(30);
            buckets[b] += 1;
        }
        for (i, count) in buckets.iter().enumerate() {
            let lo = i as f64 * 0.1;
            let hi = if i == 30 { f64::INFINITY } else { lo + 0.1 };
            out.push_str(&format!("{lo:.1},{hi:.1},{count}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("greedy allocator never reached completion milestone {milestone}")]
    UndefinedMilestone { milestone: usize },
}

/// Additional completions the `optimal` timeline accumulated by the instant
/// `greedy` reached each multiple of `milestone` completions.
pub fn additional_trained_jobs(
    greedy: &[(u64, JobId)],
    optimal: &[(u64, JobId)],
    milestone: usize,
) -> Result<Vec<i64>, ExperimentError> {
    if milestone == 0 || greedy.len() < milestone {
        return Err(ExperimentError::UndefinedMilestone { milestone });
    }
    let mut rows = Vec::new();
    let mut m = milestone;
    while m <= greedy.len() {
        let t_m = greedy[m - 1].0;
        let optimal_by_then = optimal.partition_point(|&(t, _)| t <= t_m);
        rows.push(optimal_by_then as i64 - m as i64);
        m += milestone;
    }
    Ok(rows)
}

/// The per-replication trace and simulation knobs a scenario implies.
fn scenario_setup(
    spec: &ExperimentSpec,
    base: &[JobSpec],
    replication: usize,
) -> (Vec<JobSpec>, f64, f64, u64) {
    let rep_seed = spec.seed.wrapping_add(replication as u64);
    match spec.scenario {
        Scenario::Baseline | Scenario::Heterogeneous => {
            (base.to_vec(), 0.0, 0.0, spec.scaling_delay_s)
        }
        Scenario::Disturbance => (base.to_vec(), 0.10, 1.0, spec.scaling_delay_s),
        Scenario::Harsh => (
            annotate_failures(base, 0.15, 0.10, rep_seed),
            0.10,
            0.75,
            spec.scaling_delay_s,
        ),
        Scenario::ScalingDelay => (base.to_vec(), 0.0, 0.0, 15),
    }
}

struct Cell {
    trace: std::sync::Arc<Vec<JobSpec>>,
    config: SimulationConfig,
}

/// Runs the full experiment grid and aggregates the comparison report.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ComparisonReport, ExperimentError> {
    spec.validate()?;
    let base = match &spec.source {
        TraceSource::Explicit(jobs) => jobs.clone(),
        TraceSource::Profile(profile) => generate(profile, spec.seed)?,
    };

    let mut cells = Vec::new();
    for replication in 0..spec.replications {
        let (trace, eta, fraction, delay) = scenario_setup(spec, &base, replication);
        let trace = std::sync::Arc::new(trace);
        for &node_count in &spec.node_counts {
            for &allocator in &spec.allocators {
                let config = SimulationConfig {
                    cluster: ClusterConfig {
                        total_nodes: node_count,
                        epoch_period_s: spec.epoch_period_s,
                        horizon_steps: spec.horizon_steps,
                        scaling_delay_s: delay,
                        eta_disturbance: eta,
                        rng_seed: spec.seed.wrapping_add(replication as u64),
                        ..ClusterConfig::default()
                    },
                    allocator,
                    budget: spec.budget,
                    greedy_metric: spec.greedy_metric,
                    disturbed_fraction: fraction,
                    bug_fraction: 0.0,
                    terminate_fraction: 0.0,
                    horizon_end_s: None,
                };
                cells.push(Cell { trace: trace.clone(), config });
            }
        }
    }

    let outcomes: Vec<Result<SimulationReport, SimError>> =
        par::map_cells(cells, |cell| sim::run(&cell.trace, &cell.config));
    let mut reports: Vec<(usize, u32, AllocatorKind, SimulationReport)> = Vec::new();
    let mut iter = outcomes.into_iter();
    for replication in 0..spec.replications {
        for &node_count in &spec.node_counts {
            for &allocator in &spec.allocators {
                let report = iter.next().expect("one outcome per cell")?;
                reports.push((replication, node_count, allocator, report));
            }
        }
    }

    let find = |rep: usize, n: u32, a: AllocatorKind| {
        reports
            .iter()
            .find(|(r, nn, aa, _)| *r == rep && *nn == n && *aa == a)
            .map(|(_, _, _, report)| report)
    };

    let mut cells_out = Vec::new();
    for &node_count in &spec.node_counts {
        for &allocator in &spec.allocators {
            let mut queue = 0.0;
            let mut total = 0.0;
            let mut completed = 0.0;
            let mut failed = 0.0;
            let mut unfinished = 0.0;
            for rep in 0..spec.replications {
                let report = find(rep, node_count, allocator).expect("cell ran");
                queue += report.mean_queue_minutes();
                total += report.mean_total_minutes();
                completed += report.completed_count() as f64;
                failed += report.failed_count() as f64;
                unfinished +=
                    (report.records.len() - report.completed_count() - report.failed_count())
                        as f64;
            }
            let reps = spec.replications as f64;
            cells_out.push(CellMetrics {
                node_count,
                allocator,
                mean_queue_minutes: queue / reps,
                mean_total_minutes: total / reps,
                completed: completed / reps,
                failed: failed / reps,
                unfinished: unfinished / reps,
            });
        }
    }

    let both = spec.allocators.contains(&AllocatorKind::Greedy)
        && spec.allocators.contains(&AllocatorKind::Optimal);
    let mut additional_trained = Vec::new();
    if both {
        for &node_count in &spec.node_counts {
            let mut first: Vec<i64> = Vec::new();
            let mut mean_acc = 0.0;
            let mut mean_n = 0usize;
            for rep in 0..spec.replications {
                let greedy = find(rep, node_count, AllocatorKind::Greedy).expect("cell");
                let optimal = find(rep, node_count, AllocatorKind::Optimal).expect("cell");
                // Short traces that never reach the milestone report an
                // empty row instead of aborting the sweep.
                let rows = match additional_trained_jobs(
                    &greedy.completions,
                    &optimal.completions,
                    DEFAULT_MILESTONE,
                ) {
                    Ok(rows) => rows,
                    Err(ExperimentError::UndefinedMilestone { .. }) => Vec::new(),
                    Err(other) => return Err(other),
                };
                if rep == 0 {
                    first = rows.clone();
                }
                if !rows.is_empty() {
                    mean_acc += rows.iter().sum::<i64>() as f64 / rows.len() as f64;
                    mean_n += 1;
                }
            }
            additional_trained.push(MilestoneRow {
                node_count,
                per_milestone: first,
                mean: if mean_n == 0 { 0.0 } else { mean_acc / mean_n as f64 },
            });
        }
    }

    let mut latency = Vec::new();
    let mut near = Vec::new();
    for (_, _, allocator, report) in &reports {
        if *allocator == AllocatorKind::Optimal {
            latency.extend_from_slice(&report.solver_latency_s);
            near.extend_from_slice(&report.solver_near_optimal_s);
        }
    }

    Ok(ComparisonReport {
        schema_version: COMPARISON_SCHEMA_VERSION.to_string(),
        scenario: spec.scenario,
        seed: spec.seed,
        cells: cells_out,
        additional_trained,
        latency: LatencyStats::from_samples(latency.clone(), near),
        latency_samples: latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline(times: &[u64]) -> Vec<(u64, JobId)> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, JobId::new(format!("j{i:04}"))))
            .collect()
    }

    #[test]
    fn identical_timelines_give_zero_extra() {
        let times: Vec<u64> = (0..250).map(|i| i * 10).collect();
        let g = timeline(&times);
        let rows = additional_trained_jobs(&g, &g, 100).unwrap();
        assert_eq!(rows, vec![0, 0]);
    }

    #[test]
    fn constant_lead_gives_constant_extra() {
        // Optimal is always exactly 7 completions ahead.
        let greedy_times: Vec<u64> = (0..300).map(|i| 1000 + i * 10).collect();
        let optimal_times: Vec<u64> = (0..307).map(|i| 930 + i * 10).collect();
        let g = timeline(&greedy_times);
        let o = timeline(&optimal_times);
        let rows = additional_trained_jobs(&g, &o, 100).unwrap();
        assert_eq!(rows, vec![7, 7, 7]);
    }

    #[test]
    fn milestone_unreached_is_an_error() {
        let g = timeline(&[10, 20, 30]);
        assert!(matches!(
            additional_trained_jobs(&g, &g, 100),
            Err(ExperimentError::UndefinedMilestone { milestone: 100 })
        ));
    }

    #[test]
    fn spec_validation_catches_misordered_nodes() {
        let mut spec = ExperimentSpec::baseline_sweep(
            TraceSource::Profile(SyntheticProfile::baseline()),
            1,
        );
        spec.node_counts = vec![90, 70];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let profile = SyntheticProfile {
            count: 30,
            arrival_rate_per_hour: 30.0,
            large_mean_minutes: 40.0,
            ..SyntheticProfile::baseline()
        };
        let mut spec =
            ExperimentSpec::baseline_sweep(TraceSource::Profile(profile), 5);
        spec.node_counts = vec![8, 16];
        spec.budget = SolverBudget::deterministic(20_000);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.additional_trained, b.additional_trained);
        assert_eq!(a.queueing_csv(), b.queueing_csv());
    }

    #[test]
    fn csv_schemas_are_stable() {
        let report = ComparisonReport {
            schema_version: COMPARISON_SCHEMA_VERSION.to_string(),
            scenario: Scenario::Baseline,
            seed: 1,
            cells: vec![CellMetrics {
                node_count: 70,
                allocator: AllocatorKind::Optimal,
                mean_queue_minutes: 1.25,
                mean_total_minutes: 100.5,
                completed: 400.0,
                failed: 3.0,
                unfinished: 0.0,
            }],
            additional_trained: vec![MilestoneRow {
                node_count: 70,
                per_milestone: vec![5, 8],
                mean: 6.5,
            }],
            latency: None,
            latency_samples: vec![0.05, 0.05, 0.21, 5.0],
        };
        assert_eq!(
            report.queueing_csv(),
            "node_count,allocator,mean_queue_minutes\n70,optimal,1.2500\n"
        );
        assert_eq!(
            report.additional_jobs_csv(),
            "node_count,milestone,additional_jobs\n70,100,5\n70,200,8\n"
        );
        let hist = report.latency_histogram_csv();
        assert!(hist.starts_with("bucket_lo_s,bucket_hi_s,count\n0.0,0.1,2\n"));
        assert!(hist.contains("0.2,0.3,1\n"));
        assert!(hist.contains("3.0,inf,1\n"));
    }

    #[test]
    fn latency_stats_order_statistics() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let stats = LatencyStats::from_samples(samples, vec![0.2, 0.1, 0.3]).unwrap();
        assert_eq!(stats.samples, 100);
        assert!((stats.median_s - 0.5).abs() < 0.02);
        assert!((stats.p95_s - 0.95).abs() < 0.02);
        assert_eq!(stats.max_s, 1.0);
        assert_eq!(stats.near_optimal_median_s, Some(0.2));
    }
}
