//! Deterministic second-stepped cluster simulation.
//!
//! Each simulated second processes, in order: pending node releases,
//! arrivals, scaling-hold expiries, either an allocator activation (on
//! epoch boundaries) or opportunistic queue starts, progress accrual,
//! completions, and scripted failures. Nodes released by a finished job
//! become usable one second later, matching the behavior the allocators
//! are compared under.
//!
//! Runs are reproducible: identical trace, configuration, and seed yield
//! identical reports apart from wall-clock solver timings, which are
//! excluded from [`SimulationReport::deterministic_bytes`].

use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    make_snapshot, sample_disturbance, ClusterConfig, DomainError, EpochPlan, FailureKind,
    JobId, JobPhase, JobRuntimeState, JobSpec,
};
use crate::greedy::{greedy_plan, GreedyDecision, TrainingTimeMetric};
use crate::milp::legal_counts_for_bounds;
use crate::solver::{plan_epoch, SolveError, SolverBudget};
use crate::speed::SpeedCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Optimal,
    Greedy,
}

impl std::fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AllocatorKind::Optimal => f.write_str("optimal"),
            AllocatorKind::Greedy => f.write_str("greedy"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub cluster: ClusterConfig,
    pub allocator: AllocatorKind,
    pub budget: SolverBudget,
    pub greedy_metric: TrainingTimeMetric,
    /// Fraction of jobs whose observed ETA carries the configured
    /// disturbance.
    pub disturbed_fraction: f64,
    /// Fractions used when traces are annotated for robustness scenarios;
    /// the loop itself replays whatever the trace scripts.
    pub bug_fraction: f64,
    pub terminate_fraction: f64,
    /// Stop at this second even if jobs remain; `None` runs to drain.
    pub horizon_end_s: Option<u64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            cluster: ClusterConfig::default(),
            allocator: AllocatorKind::Optimal,
            budget: SolverBudget::deterministic(50_000),
            greedy_metric: TrainingTimeMetric::Elapsed,
            disturbed_fraction: 0.0,
            bug_fraction: 0.0,
            terminate_fraction: 0.0,
            horizon_end_s: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.cluster.validate()?;
        for f in [self.disturbed_fraction, self.bug_fraction, self.terminate_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SimError::Config(format!("fraction {f} outside [0, 1]")));
            }
        }
        if self.bug_fraction + self.terminate_fraction > 1.0 {
            return Err(SimError::Config(
                "bug and terminate fractions must sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    FailedBug,
    FailedKilled,
    Unfinished,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Outcome::Completed => "completed",
            Outcome::FailedBug => "failed_bug",
            Outcome::FailedKilled => "failed_killed",
            Outcome::Unfinished => "unfinished",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub submit_s: u64,
    pub start_s: Option<u64>,
    pub end_s: Option<u64>,
    pub queue_s: Option<u64>,
    pub train_s: Option<u64>,
    pub total_s: Option<u64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSample {
    pub epoch_s: u64,
    pub busy_nodes: u32,
    pub idle_nodes: u32,
}

pub const REPORT_SCHEMA_VERSION: &str = "report-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: String,
    pub records: Vec<JobRecord>,
    /// Completion timeline ordered by (second, job id).
    pub completions: Vec<(u64, JobId)>,
    pub utilization: Vec<EpochSample>,
    pub epochs: u64,
    /// Wall-clock seconds per optimal-allocator activation.
    pub solver_latency_s: Vec<f64>,
    /// Seconds to the first incumbent within 5% of the bound, per epoch.
    pub solver_near_optimal_s: Vec<f64>,
}

impl SimulationReport {
    /// Per-job rows in a fixed, versioned column order. Absent values are
    /// empty fields.
    pub fn jobs_csv(&self) -> String {
        let mut out = String::from("job_id,submit_s,start_s,end_s,queue_s,train_s,total_s,outcome\n");
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.id,
                r.submit_s,
                opt(r.start_s),
                opt(r.end_s),
                opt(r.queue_s),
                opt(r.train_s),
                opt(r.total_s),
                r.outcome
            ));
        }
        out
    }

    /// Canonical bytes of everything the simulation determines, excluding
    /// wall-clock solver timings. Equal seeds must produce equal bytes.
    pub fn deterministic_bytes(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct View<'a> {
            schema_version: &'a str,
            records: &'a [JobRecord],
            completions: &'a [(u64, JobId)],
            utilization: &'a [EpochSample],
            epochs: u64,
        }
        serde_json::to_vec(&View {
            schema_version: &self.schema_version,
            records: &self.records,
            completions: &self.completions,
            utilization: &self.utilization,
            epochs: self.epochs,
        })
        .expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn mean_minutes(&self, value: impl Fn(&JobRecord) -> Option<u64>) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for r in &self.records {
            if r.outcome == Outcome::Completed {
                if let Some(v) = value(r) {
                    total += v as f64 / 60.0;
                    n += 1;
                }
            }
        }
        if n == 0 { 0.0 } else { total / n as f64 }
    }

    /// Mean queueing minutes over completed jobs.
    pub fn mean_queue_minutes(&self) -> f64 {
        self.mean_minutes(|r| r.queue_s)
    }

    /// Mean submission-to-completion minutes over completed jobs.
    pub fn mean_total_minutes(&self) -> f64 {
        self.mean_minutes(|r| r.total_s)
    }

    pub fn completed_count(&self) -> usize {
        self.records.iter().filter(|r| r.outcome == Outcome::Completed).count()
    }

    pub fn failed_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.outcome, Outcome::FailedBug | Outcome::FailedKilled))
            .count()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("trace row {index} is not sorted by submit time")]
    UnsortedTrace { index: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("allocator plan rejected at {second}s: {reason}")]
    PlanRejected { second: u64, reason: String },
    #[error("node conservation violated at {second}s: {detail}")]
    Conservation { second: u64, detail: String },
    #[error("simulation stalled after {second}s with jobs still active")]
    Stalled { second: u64 },
}

struct Engine<'a> {
    cfg: &'a SimulationConfig,
    curve: SpeedCurve,
    states: Vec<JobRuntimeState>,
    arrived: Vec<bool>,
    /// Per-second progress at the current active node count.
    rate: Vec<f64>,
    bug_at: Vec<Option<u64>>,
    kill_at: Vec<Option<u64>>,
    queue: VecDeque<usize>,
    active: Vec<usize>,
    idle: u32,
    pending_release: Vec<usize>,
    queued_kills: BinaryHeap<Reverse<(u64, usize)>>,
    completions: Vec<(u64, JobId)>,
    utilization: Vec<EpochSample>,
    epochs: u64,
    solver_latency_s: Vec<f64>,
    solver_near_optimal_s: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(trace: &[JobSpec], cfg: &'a SimulationConfig) -> Result<Self, SimError> {
        let curve = SpeedCurve::standard(&cfg.cluster.legal_node_counts)?;
        let n = trace.len();
        Ok(Engine {
            cfg,
            curve,
            states: trace.iter().cloned().map(JobRuntimeState::new).collect(),
            arrived: vec![false; n],
            rate: vec![0.0; n],
            bug_at: vec![None; n],
            kill_at: vec![None; n],
            queue: VecDeque::new(),
            active: Vec::new(),
            idle: cfg.cluster.total_nodes,
            pending_release: Vec::new(),
            queued_kills: BinaryHeap::new(),
            completions: Vec::new(),
            utilization: Vec::new(),
            epochs: 0,
            solver_latency_s: Vec::new(),
            solver_near_optimal_s: Vec::new(),
        })
    }

    fn update_rate(&mut self, idx: usize) {
        let k = self.states[idx].nodes_active;
        self.rate[idx] = self
            .curve
            .per_second_progress(k)
            .expect("active counts are always legal");
    }

    fn arrive(&mut self, idx: usize, now: u64) -> Result<(), SimError> {
        self.arrived[idx] = true;
        let state = &mut self.states[idx];
        // A job that can never fit the pool would starve the queue forever.
        legal_counts_for_bounds(
            &state.spec.id,
            state.spec.n_min,
            state.spec.n_max,
            &self.cfg.cluster,
        )
        .map_err(|e| SimError::Config(e.to_string()))?;
        if let Some(mult) = sample_disturbance(
            self.cfg.cluster.rng_seed,
            &state.spec.id,
            self.cfg.cluster.eta_disturbance,
            self.cfg.disturbed_fraction,
        ) {
            state.disturbed_demand = Some(state.spec.demand_node_hours * mult);
        }
        if let FailureKind::UserTerminate { kill_after_s } = state.spec.failure {
            let at = now.saturating_add(kill_after_s);
            self.kill_at[idx] = Some(at);
            self.queued_kills.push(Reverse((at, idx)));
        }
        self.queue.push_back(idx);
        Ok(())
    }

    fn start_job(&mut self, idx: usize, k: u32, now: u64) -> Result<(), SimError> {
        if self.idle < k {
            return Err(SimError::PlanRejected {
                second: now,
                reason: format!(
                    "start of {} needs {k} nodes but only {} idle",
                    self.states[idx].spec.id, self.idle
                ),
            });
        }
        self.idle -= k;
        let delay = self.cfg.cluster.scaling_delay_s;
        let state = &mut self.states[idx];
        state.nodes_assigned = k;
        state.training_start_s = Some(now);
        if delay > 0 {
            state.phase = JobPhase::ScalingHold;
            state.hold_until_s = Some(now + delay);
            state.nodes_active = 0;
        } else {
            state.phase = JobPhase::Training;
            state.nodes_active = k;
        }
        if let FailureKind::Bug { hang_after_s } = state.spec.failure {
            self.bug_at[idx] = Some(now + hang_after_s);
        }
        self.queue.retain(|&q| q != idx);
        self.active.push(idx);
        self.update_rate(idx);
        Ok(())
    }

    fn scale_down(&mut self, idx: usize, new_count: u32, _now: u64) {
        let state = &mut self.states[idx];
        let released = state.nodes_assigned - new_count;
        self.idle += released;
        state.nodes_assigned = new_count;
        if state.nodes_active > new_count {
            state.nodes_active = new_count;
        }
        if state.phase == JobPhase::ScalingHold && state.nodes_active == state.nodes_assigned {
            state.phase = JobPhase::Training;
            state.hold_until_s = None;
        }
        self.update_rate(idx);
    }

    fn scale_up(&mut self, idx: usize, new_count: u32, now: u64) -> Result<(), SimError> {
        let delta = new_count - self.states[idx].nodes_assigned;
        if self.idle < delta {
            return Err(SimError::PlanRejected {
                second: now,
                reason: format!(
                    "scale-up of {} needs {delta} nodes but only {} idle",
                    self.states[idx].spec.id, self.idle
                ),
            });
        }
        self.idle -= delta;
        let delay = self.cfg.cluster.scaling_delay_s;
        let state = &mut self.states[idx];
        state.nodes_assigned = new_count;
        if delay > 0 {
            state.phase = JobPhase::ScalingHold;
            state.hold_until_s = Some(now + delay);
        } else {
            state.nodes_active = new_count;
        }
        self.update_rate(idx);
        Ok(())
    }

    /// Terminal transitions release their nodes at the start of the next
    /// second.
    fn release_pending(&mut self) {
        for idx in self.pending_release.drain(..) {
            let state = &mut self.states[idx];
            self.idle += state.nodes_assigned;
            state.nodes_assigned = 0;
            state.nodes_active = 0;
        }
    }

    fn expire_holds(&mut self, now: u64) {
        for &idx in &self.active {
            let state = &mut self.states[idx];
            if state.phase == JobPhase::ScalingHold {
                if let Some(until) = state.hold_until_s {
                    if now >= until {
                        state.phase = JobPhase::Training;
                        state.hold_until_s = None;
                        state.nodes_active = state.nodes_assigned;
                        let k = state.nodes_active;
                        self.rate[idx] = self
                            .curve
                            .per_second_progress(k)
                            .expect("legal count");
                    }
                }
            }
        }
    }

    fn front_start_count(&self, idx: usize) -> Option<u32> {
        let spec = &self.states[idx].spec;
        let legal =
            legal_counts_for_bounds(&spec.id, spec.n_min, spec.n_max, &self.cfg.cluster)
                .ok()?;
        legal.into_iter().rev().find(|&k| k <= self.idle)
    }

    /// Regular-time starts: give the queue front as many nodes as fit,
    /// repeating while jobs and idle nodes remain.
    fn opportunistic_starts(&mut self, now: u64) -> Result<(), SimError> {
        while self.idle > 0 {
            let Some(&front) = self.queue.front() else { break };
            if self.states[front].phase != JobPhase::Queued {
                self.queue.pop_front();
                continue;
            }
            let Some(k) = self.front_start_count(front) else { break };
            self.start_job(front, k, now)?;
        }
        Ok(())
    }

    fn epoch(&mut self, now: u64) -> Result<(), SimError> {
        let snapshot = make_snapshot(
            now,
            self.states
                .iter()
                .enumerate()
                .filter(|&(i, _)| self.arrived[i])
                .map(|(_, s)| s),
            &self.cfg.cluster,
        );
        let index: BTreeMap<JobId, usize> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.spec.id.clone(), i))
            .collect();
        match self.cfg.allocator {
            AllocatorKind::Optimal => {
                let result = plan_epoch(&snapshot, &self.cfg.cluster, &self.cfg.budget)?;
                self.solver_latency_s.push(result.plan.solve_time_s);
                if let Some(t) = result.near_optimal_s {
                    self.solver_near_optimal_s.push(t);
                }
                self.apply_epoch_plan(&result.plan, &snapshot, &index, now)?;
            }
            AllocatorKind::Greedy => {
                let mut elapsed = BTreeMap::new();
                for job in snapshot.jobs.iter().filter(|j| j.training) {
                    let idx = index[&job.id];
                    let started = self.states[idx].training_start_s.unwrap_or(now);
                    elapsed.insert(job.id.clone(), now - started);
                }
                let decision =
                    greedy_plan(&snapshot, &self.cfg.cluster, &elapsed, self.cfg.greedy_metric);
                self.apply_greedy(&decision, &index, now)?;
            }
        }
        self.epochs += 1;
        self.utilization.push(EpochSample {
            epoch_s: now,
            busy_nodes: self.cfg.cluster.total_nodes - self.idle,
            idle_nodes: self.idle,
        });
        Ok(())
    }

    /// Applies an epoch plan: scale-downs first so released nodes fund the
    /// starts and scale-ups that follow.
    fn apply_epoch_plan(
        &mut self,
        plan: &EpochPlan,
        snapshot: &crate::domain::ClusterSnapshot,
        index: &BTreeMap<JobId, usize>,
        now: u64,
    ) -> Result<(), SimError> {
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        let mut starts = Vec::new();
        for job in &snapshot.jobs {
            let idx = index[&job.id];
            let target = plan.first_step(&job.id).ok_or_else(|| SimError::PlanRejected {
                second: now,
                reason: format!("plan is missing job {}", job.id),
            })?;
            if job.training {
                match target.cmp(&job.current_nodes) {
                    std::cmp::Ordering::Less => downs.push((idx, target)),
                    std::cmp::Ordering::Greater => ups.push((idx, target)),
                    std::cmp::Ordering::Equal => {}
                }
            } else if target > 0 {
                starts.push((idx, target));
            }
        }
        for (idx, target) in downs {
            self.scale_down(idx, target, now);
        }
        for (idx, target) in starts {
            self.start_job(idx, target, now)?;
        }
        for (idx, target) in ups {
            self.scale_up(idx, target, now)?;
        }
        Ok(())
    }

    fn apply_greedy(
        &mut self,
        decision: &GreedyDecision,
        index: &BTreeMap<JobId, usize>,
        now: u64,
    ) -> Result<(), SimError> {
        for (id, &target) in &decision.scale_downs {
            self.scale_down(index[id], target, now);
        }
        for (id, &target) in &decision.starts {
            self.start_job(index[id], target, now)?;
        }
        for (id, &target) in &decision.scale_ups {
            self.scale_up(index[id], target, now)?;
        }
        Ok(())
    }

    fn progress_and_transitions(&mut self, now: u64) {
        let mut still_active = Vec::with_capacity(self.active.len());
        for pos in 0..self.active.len() {
            let idx = self.active[pos];
            let state = &mut self.states[idx];
            if state.nodes_active > 0 {
                state.served_node_hours += self.rate[idx];
            }
            if state.served_node_hours >= state.spec.demand_node_hours {
                state.phase = JobPhase::Done;
                state.completion_s = Some(now);
                state.hold_until_s = None;
                self.completions.push((now, state.spec.id.clone()));
                self.pending_release.push(idx);
                continue;
            }
            let hung = self.bug_at[idx].is_some_and(|at| now >= at);
            let killed = self.kill_at[idx].is_some_and(|at| now >= at);
            if hung || killed {
                state.phase = JobPhase::Failed;
                state.completion_s = Some(now);
                state.hold_until_s = None;
                self.pending_release.push(idx);
                continue;
            }
            still_active.push(idx);
        }
        self.active = still_active;
    }

    fn kill_queued(&mut self, now: u64) {
        while let Some(&Reverse((at, idx))) = self.queued_kills.peek() {
            if at > now {
                break;
            }
            self.queued_kills.pop();
            let state = &mut self.states[idx];
            if state.phase == JobPhase::Queued {
                state.phase = JobPhase::Failed;
                state.completion_s = Some(now);
                self.queue.retain(|&q| q != idx);
            }
        }
    }

    fn check_conservation(&self, now: u64) -> Result<(), SimError> {
        let assigned: u64 =
            self.states.iter().map(|s| u64::from(s.nodes_assigned)).sum();
        if assigned + u64::from(self.idle) != u64::from(self.cfg.cluster.total_nodes) {
            return Err(SimError::Conservation {
                second: now,
                detail: format!(
                    "assigned {assigned} + idle {} != pool {}; active={:?}",
                    self.idle,
                    self.cfg.cluster.total_nodes,
                    self.active
                        .iter()
                        .map(|&i| {
                            let s = &self.states[i];
                            format!("{}:{}", s.spec.id, s.nodes_assigned)
                        })
                        .collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }
}

fn outcome_of(state: &JobRuntimeState) -> Outcome {
    match state.phase {
        JobPhase::Done => Outcome::Completed,
        JobPhase::Failed => match state.spec.failure {
            FailureKind::Bug { .. } => Outcome::FailedBug,
            FailureKind::UserTerminate { .. } => Outcome::FailedKilled,
            FailureKind::None => Outcome::Unfinished,
        },
        _ => Outcome::Unfinished,
    }
}

/// Runs the trace to completion (or `horizon_end_s`) under `config`.
pub fn run(trace: &[JobSpec], config: &SimulationConfig) -> Result<SimulationReport, SimError> {
    config.validate()?;
    for (i, w) in trace.windows(2).enumerate() {
        if w[1].submit_s < w[0].submit_s {
            return Err(SimError::UnsortedTrace { index: i + 1 });
        }
    }
    for job in trace {
        job.validate()?;
    }

    let mut engine = Engine::new(trace, config)?;
    // Arrival order: submit time, then id, so FIFO matches snapshots.
    let mut arrival_order: Vec<usize> = (0..trace.len()).collect();
    arrival_order.sort_by(|&a, &b| {
        (trace[a].submit_s, &trace[a].id).cmp(&(trace[b].submit_s, &trace[b].id))
    });
    let mut next_arrival = 0usize;

    // Generous stall guard: total single-node work plus slack.
    let total_work_s: u64 = trace
        .iter()
        .map(|j| (j.demand_node_hours * 3600.0).ceil() as u64)
        .sum();
    let last_submit = trace.iter().map(|j| j.submit_s).max().unwrap_or(0);
    let stall_cap = last_submit
        .saturating_add(total_work_s.saturating_mul(4))
        .saturating_add(86_400);

    let period = config.cluster.epoch_period_s;
    let mut now: u64 = 0;
    loop {
        if let Some(end) = config.horizon_end_s {
            if now >= end {
                break;
            }
        }
        engine.release_pending();
        while next_arrival < arrival_order.len()
            && trace[arrival_order[next_arrival]].submit_s == now
        {
            engine.arrive(arrival_order[next_arrival], now)?;
            next_arrival += 1;
        }
        if config.cluster.scaling_delay_s > 0 {
            engine.expire_holds(now);
        }
        if now.is_multiple_of(period) {
            engine.epoch(now)?;
        } else {
            engine.opportunistic_starts(now)?;
        }
        engine.progress_and_transitions(now);
        engine.kill_queued(now);
        engine.check_conservation(now)?;

        let drained = next_arrival == arrival_order.len()
            && engine.active.is_empty()
            && engine.queue.iter().all(|&i| engine.states[i].phase != JobPhase::Queued)
            && engine.pending_release.is_empty();
        if drained {
            break;
        }
        now += 1;
        if now > stall_cap {
            return Err(SimError::Stalled { second: now });
        }
    }

    let records = engine
        .states
        .iter()
        .map(|state| {
            let outcome = outcome_of(state);
            let start_s = state.training_start_s;
            let end_s = state.completion_s;
            JobRecord {
                id: state.spec.id.clone(),
                submit_s: state.spec.submit_s,
                start_s,
                end_s,
                queue_s: start_s.map(|s| s - state.spec.submit_s),
                train_s: start_s.zip(end_s).map(|(s, e)| e - s),
                total_s: end_s.map(|e| e - state.spec.submit_s),
                outcome,
            }
        })
        .collect();
    let mut completions = engine.completions;
    completions.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(SimulationReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        records,
        completions,
        utilization: engine.utilization,
        epochs: engine.epochs,
        solver_latency_s: engine.solver_latency_s,
        solver_near_optimal_s: engine.solver_near_optimal_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::JobId;

    fn job(id: &str, submit: u64, demand: f64) -> JobSpec {
        JobSpec {
            id: JobId::from(id),
            submit_s: submit,
            demand_node_hours: demand,
            n_min: 1,
            n_max: 16,
            failure: FailureKind::None,
        }
    }

    fn config(total_nodes: u32, allocator: AllocatorKind) -> SimulationConfig {
        SimulationConfig {
            cluster: ClusterConfig { total_nodes, ..ClusterConfig::default() },
            allocator,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn single_job_completes_near_analytic_time() {
        // Plenty of nodes: the job should run at 16 nodes nearly the whole
        // time, finishing within a second of demand/speed(16).
        for allocator in [AllocatorKind::Optimal, AllocatorKind::Greedy] {
            let trace = vec![job("j0", 0, 2.0)];
            let report = run(&trace, &config(70, allocator)).unwrap();
            let r = &report.records[0];
            assert_eq!(r.outcome, Outcome::Completed);
            assert_eq!(r.start_s, Some(0));
            let analytic_s = 2.0 / 6.5536 * 3600.0;
            let train = r.train_s.unwrap() as f64;
            assert!(
                (train - analytic_s).abs() <= 1.5,
                "{allocator}: train {train} vs analytic {analytic_s}"
            );
        }
    }

    #[test]
    fn released_nodes_start_next_job_one_second_later() {
        // Job 1 occupies the whole 8-node pool; job 2 must wait for it and
        // starts exactly one second after job 1's completion label.
        let demand = 8.0 * 4.096 / 3600.0; // exactly 8 seconds of work at 8 nodes
        let trace = vec![job("j1", 0, demand), {
            let mut j = job("j2", 3, 1.0);
            j.n_min = 8;
            j
        }];
        let report = run(&trace, &config(8, AllocatorKind::Optimal)).unwrap();
        let j1 = &report.records[0];
        let j2 = &report.records[1];
        let end = j1.end_s.unwrap();
        assert_eq!(j2.start_s, Some(end + 1));
    }

    #[test]
    fn scaling_delay_holds_old_count() {
        // One job, 15 s delay: the start at t=0 holds (zero nodes active)
        // until t=15, so no progress accrues during the first 15 seconds.
        let mut cfg = config(16, AllocatorKind::Optimal);
        cfg.cluster.scaling_delay_s = 15;
        let trace = vec![job("j0", 0, 0.5)];
        let with_delay = run(&trace, &cfg).unwrap();
        let without = run(&trace, &config(16, AllocatorKind::Optimal)).unwrap();
        let d = with_delay.records[0].train_s.unwrap();
        let n = without.records[0].train_s.unwrap();
        assert_eq!(d, n + 15, "hold defers all progress by the delay");
    }

    #[test]
    fn identical_seeds_are_byte_identical() {
        let trace: Vec<JobSpec> =
            (0..12).map(|i| job(&format!("j{i:02}"), i * 120, 0.3 + i as f64 * 0.15)).collect();
        for allocator in [AllocatorKind::Optimal, AllocatorKind::Greedy] {
            let mut cfg = config(8, allocator);
            cfg.cluster.eta_disturbance = 0.10;
            cfg.disturbed_fraction = 1.0;
            cfg.cluster.rng_seed = 42;
            let a = run(&trace, &cfg).unwrap();
            let b = run(&trace, &cfg).unwrap();
            assert_eq!(a.deterministic_bytes(), b.deterministic_bytes());
        }
    }

    #[test]
    fn bug_job_fails_on_schedule() {
        let mut bugged = job("b0", 0, 50.0);
        bugged.failure = FailureKind::Bug { hang_after_s: 90 };
        let report = run(&[bugged], &config(16, AllocatorKind::Optimal)).unwrap();
        let r = &report.records[0];
        assert_eq!(r.outcome, Outcome::FailedBug);
        assert!(r.train_s.unwrap() <= 91);
        assert!(report.completions.is_empty());
    }

    #[test]
    fn killed_job_never_completes() {
        let mut killed = job("k0", 5, 0.5);
        killed.failure = FailureKind::UserTerminate { kill_after_s: 60 };
        let report = run(&[killed], &config(16, AllocatorKind::Optimal)).unwrap();
        assert_eq!(report.records[0].outcome, Outcome::FailedKilled);
        assert_eq!(report.records[0].end_s, Some(65));
        assert!(report.completions.is_empty());
    }

    #[test]
    fn kill_while_queued_removes_the_job() {
        // j0 saturates the single node; j1 is killed before it could start.
        let trace = vec![job("j0", 0, 1.0), {
            let mut j = job("j1", 10, 1.0);
            j.failure = FailureKind::UserTerminate { kill_after_s: 30 };
            j
        }];
        let report = run(&trace, &config(1, AllocatorKind::Optimal)).unwrap();
        let r = &report.records[1];
        assert_eq!(r.outcome, Outcome::FailedKilled);
        assert_eq!(r.start_s, None);
        assert_eq!(r.end_s, Some(40));
    }

    #[test]
    fn unsorted_trace_is_rejected() {
        let trace = vec![job("a", 100, 1.0), job("b", 50, 1.0)];
        assert!(matches!(
            run(&trace, &config(8, AllocatorKind::Optimal)),
            Err(SimError::UnsortedTrace { index: 1 })
        ));
    }

    #[test]
    fn horizon_end_marks_unfinished() {
        let trace = vec![job("j0", 0, 100.0)];
        let mut cfg = config(4, AllocatorKind::Greedy);
        cfg.horizon_end_s = Some(600);
        let report = run(&trace, &cfg).unwrap();
        assert_eq!(report.records[0].outcome, Outcome::Unfinished);
        assert!(report.records[0].end_s.is_none());
    }

    #[test]
    fn queue_metrics_match_definitions() {
        let trace = vec![job("j0", 0, 1.0), job("j1", 30, 1.0)];
        let report = run(&trace, &config(2, AllocatorKind::Optimal)).unwrap();
        for r in &report.records {
            assert_eq!(r.queue_s.unwrap(), r.start_s.unwrap() - r.submit_s);
            assert_eq!(r.total_s.unwrap(), r.end_s.unwrap() - r.submit_s);
            assert_eq!(
                r.train_s.unwrap(),
                r.end_s.unwrap() - r.start_s.unwrap()
            );
        }
    }
}
