//! Shared vocabulary: jobs, cluster configuration, epoch snapshots, and
//! allocation plans. Every other module builds on these types.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to observed remaining demand so progress ratios never
/// divide by zero.
pub const REMAINING_DEMAND_FLOOR: f64 = 1e-9;

/// Identifier of a job within a trace. Ordering is lexicographic, which is
/// also the FIFO tie-break for equal submit times.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub String);

impl JobId {
    pub fn new(id: impl Into<String>) -> Self {
        JobId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        JobId(s.to_owned())
    }
}

/// Scripted failure behavior attached to a job when the trace is built, so
/// every allocator replays the identical failure schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    /// Runs to completion.
    None,
    /// Hangs this many seconds after training starts; the job never finishes.
    Bug { hang_after_s: u64 },
    /// The user terminates the job this many seconds after submission, even
    /// while it is still queued.
    UserTerminate { kill_after_s: u64 },
}

/// Longest scripted hang for a buggy job, in seconds.
pub const MAX_BUG_HANG_S: u64 = 300;

/// Static description of one training job: when it arrives, how much work it
/// carries, and the node counts it accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: JobId,
    /// Submission time in seconds from the simulation origin.
    pub submit_s: u64,
    /// Total work in node·hours at single-node speed.
    pub demand_node_hours: f64,
    /// Minimum node count while training (power of two, at least 1).
    pub n_min: u32,
    /// Maximum node count (power of two, at least `n_min`).
    pub n_max: u32,
    pub failure: FailureKind,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.demand_node_hours.is_finite() && self.demand_node_hours > 0.0) {
            return Err(DomainError::InvalidJobSpec {
                id: self.id.clone(),
                reason: format!("demand must be positive, got {}", self.demand_node_hours),
            });
        }
        if self.n_min < 1 {
            return Err(DomainError::InvalidJobSpec {
                id: self.id.clone(),
                reason: "n_min must be at least 1".into(),
            });
        }
        if self.n_max < self.n_min {
            return Err(DomainError::InvalidJobSpec {
                id: self.id.clone(),
                reason: format!("n_max {} below n_min {}", self.n_max, self.n_min),
            });
        }
        if !self.n_min.is_power_of_two() || !self.n_max.is_power_of_two() {
            return Err(DomainError::InvalidJobSpec {
                id: self.id.clone(),
                reason: format!(
                    "node bounds must be powers of two, got n_min={} n_max={}",
                    self.n_min, self.n_max
                ),
            });
        }
        match self.failure {
            FailureKind::None => {}
            FailureKind::Bug { hang_after_s } => {
                if hang_after_s == 0 || hang_after_s > MAX_BUG_HANG_S {
                    return Err(DomainError::InvalidJobSpec {
                        id: self.id.clone(),
                        reason: format!(
                            "bug hang time must be in (0, {MAX_BUG_HANG_S}] s, got {hang_after_s}"
                        ),
                    });
                }
            }
            FailureKind::UserTerminate { kill_after_s } => {
                if kill_after_s == 0 {
                    return Err(DomainError::InvalidJobSpec {
                        id: self.id.clone(),
                        reason: "kill time must be positive".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Lifecycle phase of a job inside the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobPhase {
    Queued,
    Training,
    /// Nodes are committed but a scaling delay is still running; the job
    /// keeps progressing on its previous allocation.
    ScalingHold,
    Done,
    Failed,
}

impl JobPhase {
    /// Queued, training, or holding: the job is visible to the allocator.
    pub fn is_active(self) -> bool {
        matches!(self, JobPhase::Queued | JobPhase::Training | JobPhase::ScalingHold)
    }
}

/// Evolving simulation state of one job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRuntimeState {
    pub spec: JobSpec,
    pub phase: JobPhase,
    /// Nodes granted to the job, including nodes reserved during a scaling
    /// hold. Zero when queued or terminal.
    pub nodes_assigned: u32,
    /// Nodes the job currently progresses on. Differs from `nodes_assigned`
    /// only during a scaling hold.
    pub nodes_active: u32,
    /// Accumulated work in node·hours at unit speed.
    pub served_node_hours: f64,
    pub training_start_s: Option<u64>,
    pub completion_s: Option<u64>,
    /// End of the running scaling delay; present iff phase is `ScalingHold`.
    pub hold_until_s: Option<u64>,
    /// ETA the allocator observes, fixed once at submission when disturbance
    /// is configured. Completion always uses the true demand.
    pub disturbed_demand: Option<f64>,
}

impl JobRuntimeState {
    pub fn new(spec: JobSpec) -> Self {
        JobRuntimeState {
            spec,
            phase: JobPhase::Queued,
            nodes_assigned: 0,
            nodes_active: 0,
            served_node_hours: 0.0,
            training_start_s: None,
            completion_s: None,
            hold_until_s: None,
            disturbed_demand: None,
        }
    }

    /// Demand as the allocator sees it (disturbed when configured).
    pub fn observed_demand(&self) -> f64 {
        self.disturbed_demand.unwrap_or(self.spec.demand_node_hours)
    }
}

/// Cluster-wide allocator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Total nodes in the resource pool.
    pub total_nodes: u32,
    /// Seconds between allocator activations.
    pub epoch_period_s: u64,
    /// Number of look-ahead steps in the planning horizon.
    pub horizon_steps: usize,
    /// Allowed node counts, strictly increasing powers of two starting at 1.
    pub legal_node_counts: Vec<u32>,
    /// Delay before a start or scale-up takes effect (0 or 15 in the
    /// experiments here).
    pub scaling_delay_s: u64,
    /// Relative half-width of the ETA disturbance (0 disables it).
    pub eta_disturbance: f64,
    pub rng_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            total_nodes: 70,
            epoch_period_s: 300,
            horizon_steps: 5,
            legal_node_counts: vec![1, 2, 4, 8, 16],
            scaling_delay_s: 0,
            eta_disturbance: 0.0,
            rng_seed: 0,
        }
    }
}

impl ClusterConfig {
    /// Hours covered by one planning step: the epoch period converted to
    /// hours, so per-step progress is `step_hours * speed(k)` node·hours.
    pub fn step_hours(&self) -> f64 {
        self.epoch_period_s as f64 / 3600.0
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.total_nodes == 0 {
            return Err(DomainError::InvalidConfig("total_nodes must be positive".into()));
        }
        if self.epoch_period_s == 0 {
            return Err(DomainError::InvalidConfig("epoch_period_s must be positive".into()));
        }
        if self.horizon_steps == 0 {
            return Err(DomainError::InvalidConfig("horizon_steps must be at least 1".into()));
        }
        let k = &self.legal_node_counts;
        if k.first() != Some(&1) {
            return Err(DomainError::InvalidConfig(
                "legal node counts must start at 1".into(),
            ));
        }
        for w in k.windows(2) {
            if w[1] <= w[0] {
                return Err(DomainError::InvalidConfig(
                    "legal node counts must be strictly increasing".into(),
                ));
            }
        }
        if let Some(bad) = k.iter().find(|&&c| !c.is_power_of_two()) {
            return Err(DomainError::InvalidConfig(format!(
                "legal node count {bad} is not a power of two"
            )));
        }
        if !(0.0..1.0).contains(&self.eta_disturbance) {
            return Err(DomainError::InvalidConfig(format!(
                "eta_disturbance must be in [0, 1), got {}",
                self.eta_disturbance
            )));
        }
        Ok(())
    }
}

/// Node counts job `job` may legally use under `cfg`: the configured legal
/// set intersected with `[n_min, min(n_max, total_nodes)]`.
pub fn legal_set_for(job: &JobSpec, cfg: &ClusterConfig) -> Result<Vec<u32>, DomainError> {
    let cap = job.n_max.min(cfg.total_nodes);
    let set: Vec<u32> = cfg
        .legal_node_counts
        .iter()
        .copied()
        .filter(|&k| k >= job.n_min && k <= cap)
        .collect();
    if set.is_empty() {
        return Err(DomainError::EmptyLegalSet {
            id: job.id.clone(),
            n_min: job.n_min,
            n_max: job.n_max,
            total_nodes: cfg.total_nodes,
        });
    }
    Ok(set)
}

/// One active job as the allocator sees it at an epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotJob {
    pub id: JobId,
    /// Observed remaining demand in node·hours, never below
    /// [`REMAINING_DEMAND_FLOOR`].
    pub remaining_node_hours: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// True when the job currently holds nodes (training or in a hold).
    pub training: bool,
    pub current_nodes: u32,
}

/// What the allocator sees at one epoch: all active jobs in FIFO order plus
/// the pool size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub epoch_s: u64,
    pub jobs: Vec<SnapshotJob>,
    pub total_nodes: u32,
}

impl ClusterSnapshot {
    pub fn nodes_in_use(&self) -> u32 {
        self.jobs.iter().filter(|j| j.training).map(|j| j.current_nodes).sum()
    }

    pub fn idle_nodes(&self) -> u32 {
        self.total_nodes - self.nodes_in_use()
    }
}

/// Builds the allocator's view from raw job states: active jobs only, FIFO
/// by submit time (ties by id), remaining demand from the observed (possibly
/// disturbed) ETA clamped to stay positive.
pub fn make_snapshot<'a>(
    epoch_s: u64,
    states: impl IntoIterator<Item = &'a JobRuntimeState>,
    cfg: &ClusterConfig,
) -> ClusterSnapshot {
    let mut jobs: Vec<&JobRuntimeState> =
        states.into_iter().filter(|s| s.phase.is_active()).collect();
    jobs.sort_by(|a, b| {
        (a.spec.submit_s, &a.spec.id).cmp(&(b.spec.submit_s, &b.spec.id))
    });
    let jobs = jobs
        .into_iter()
        .map(|s| SnapshotJob {
            id: s.spec.id.clone(),
            remaining_node_hours: (s.observed_demand() - s.served_node_hours)
                .max(REMAINING_DEMAND_FLOOR),
            n_min: s.spec.n_min,
            n_max: s.spec.n_max,
            training: s.phase != JobPhase::Queued,
            current_nodes: s.nodes_assigned,
        })
        .collect();
    ClusterSnapshot { epoch_s, jobs, total_nodes: cfg.total_nodes }
}

/// Per-job disturbance draw, fixed for the whole run: returns the multiplier
/// applied to the job's ETA, or `None` when the job is not in the disturbed
/// fraction. Derived from the seed and job id alone so both allocators in a
/// paired comparison observe identical noise.
pub fn sample_disturbance(
    seed: u64,
    id: &JobId,
    half_width: f64,
    disturbed_fraction: f64,
) -> Option<f64> {
    if half_width <= 0.0 || disturbed_fraction <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(id.as_str()));
    let selected: f64 = rng.random();
    if selected >= disturbed_fraction {
        return None;
    }
    let unit: f64 = rng.random();
    Some(1.0 + half_width * (2.0 * unit - 1.0))
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Solver output for one epoch: node counts and served-demand profiles per
/// look-ahead step. Only step 1 is ever implemented; later steps exist so
/// the plan can be inspected and re-validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    /// Node counts per step for every job in the snapshot; deferred jobs map
    /// to all zeros.
    pub assignments: BTreeMap<JobId, Vec<u32>>,
    /// Cumulative served demand per step for admitted jobs.
    pub served_profile: BTreeMap<JobId, Vec<f64>>,
    /// Sum over jobs and steps of served/demand.
    pub objective: f64,
    /// Certified relative optimality gap (0 when proven optimal).
    pub gap: f64,
    /// Wall-clock seconds spent producing the plan.
    pub solve_time_s: f64,
}

impl EpochPlan {
    pub fn empty() -> Self {
        EpochPlan {
            assignments: BTreeMap::new(),
            served_profile: BTreeMap::new(),
            objective: 0.0,
            gap: 0.0,
            solve_time_s: 0.0,
        }
    }

    /// The implemented decision: the step-1 node count for `id`.
    pub fn first_step(&self, id: &JobId) -> Option<u32> {
        self.assignments.get(id).and_then(|steps| steps.first().copied())
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid job spec {id}: {reason}")]
    InvalidJobSpec { id: JobId, reason: String },
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error(
        "job {id} has no legal node count: n_min={n_min}, n_max={n_max}, pool={total_nodes}"
    )]
    EmptyLegalSet { id: JobId, n_min: u32, n_max: u32, total_nodes: u32 },
    #[error("node count {0} is outside the legal set")]
    UnsupportedNodeCount(u32),
}
