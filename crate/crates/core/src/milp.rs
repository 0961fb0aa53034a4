//! Assembles the per-epoch allocation program from a cluster snapshot.
//!
//! The program maximizes total training progress `sum_{i,t} s_i^t / d_i`
//! over the look-ahead horizon, subject to per-step pool capacity, per-job
//! node bounds, and the attenuated progress recursion. Node counts are
//! restricted to the legal powers-of-two set by one of two encodings:
//!
//! - [`Encoding::DeltaBigM`]: paired indicator binaries per legal count with
//!   big-M sandwich constraints; a count `k` is selected exactly when both
//!   its lower and upper indicator are 1, and a cardinality row forces
//!   exactly `|K|+1` of the sandwich inequalities to hold.
//! - [`Encoding::Assignment`]: a one-hot binary per legal count. Fewer
//!   binaries and no big-M; provably the same optima (covered by tests).
//!
//! Admission control defers queued jobs whose minimum node counts cannot
//! jointly fit, keeping the program feasible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ClusterConfig, ClusterSnapshot, DomainError, EpochPlan, JobId, SnapshotJob,
};
use crate::speed::SpeedCurve;

/// Tolerance when checking a raw solution against program constraints.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// An integer variable must land within this distance of an integer.
pub const INTEGRALITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// Paired lower/upper indicator binaries with big-M sandwich rows.
    DeltaBigM,
    /// One-hot selection binaries; the canonical solver input.
    Assignment,
}

/// An admitted job inside a program: identity, observed demand, and its
/// legal node counts with their speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramJob {
    pub id: JobId,
    pub demand: f64,
    pub legal_counts: Vec<u32>,
    pub speeds: Vec<f64>,
}

/// Outcome of admission control. Both lists preserve snapshot (FIFO) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionResult {
    pub admitted: Vec<SnapshotJob>,
    pub deferred: Vec<SnapshotJob>,
}

/// Greedy admission: training jobs are always admitted (the simulator
/// guarantees they fit at their minima); queued jobs are then taken in FIFO
/// order whenever their `n_min` still fits, and skipped otherwise.
pub fn admit(snapshot: &ClusterSnapshot) -> Result<AdmissionResult, MilpError> {
    let training_min: u64 = snapshot
        .jobs
        .iter()
        .filter(|j| j.training)
        .map(|j| u64::from(j.n_min))
        .sum();
    if training_min > u64::from(snapshot.total_nodes) {
        return Err(MilpError::TrainingOverCapacity {
            need: training_min,
            capacity: snapshot.total_nodes,
        });
    }
    let mut used = training_min;
    let mut admitted = Vec::new();
    let mut deferred = Vec::new();
    for job in &snapshot.jobs {
        if job.training {
            admitted.push(job.clone());
        } else if used + u64::from(job.n_min) <= u64::from(snapshot.total_nodes) {
            used += u64::from(job.n_min);
            admitted.push(job.clone());
        } else {
            deferred.push(job.clone());
        }
    }
    Ok(AdmissionResult { admitted, deferred })
}

/// The assembled decision program for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProgram {
    pub jobs: Vec<ProgramJob>,
    pub deferred: Vec<JobId>,
    pub horizon_steps: usize,
    pub capacity: u32,
    pub step_hours: f64,
    pub encoding: Encoding,
    pub big_m: f64,
}

/// Builds the program for `snapshot`, applying admission control and the
/// standard 0.8-attenuation speed curve.
pub fn build(
    snapshot: &ClusterSnapshot,
    cfg: &ClusterConfig,
    encoding: Encoding,
) -> Result<AllocationProgram, MilpError> {
    let curve = SpeedCurve::standard(&cfg.legal_node_counts)?;
    build_with_curve(snapshot, cfg, &curve, encoding)
}

/// As [`build`], with an explicit speed curve for sensitivity studies.
pub fn build_with_curve(
    snapshot: &ClusterSnapshot,
    cfg: &ClusterConfig,
    curve: &SpeedCurve,
    encoding: Encoding,
) -> Result<AllocationProgram, MilpError> {
    if cfg.horizon_steps == 0 {
        return Err(MilpError::EmptyHorizon);
    }
    let admission = admit(snapshot)?;
    let mut jobs = Vec::with_capacity(admission.admitted.len());
    let mut min_sum: u64 = 0;
    for job in &admission.admitted {
        let legal_counts = legal_counts_for_bounds(&job.id, job.n_min, job.n_max, cfg)?;
        let speeds = legal_counts
            .iter()
            .map(|&k| curve.speed(k))
            .collect::<Result<Vec<f64>, DomainError>>()?;
        min_sum += u64::from(legal_counts[0]);
        jobs.push(ProgramJob {
            id: job.id.clone(),
            demand: job.remaining_node_hours,
            legal_counts,
            speeds,
        });
    }
    if min_sum > u64::from(snapshot.total_nodes) {
        return Err(MilpError::TrainingOverCapacity {
            need: min_sum,
            capacity: snapshot.total_nodes,
        });
    }
    let max_legal = cfg.legal_node_counts.last().copied().unwrap_or(1);
    Ok(AllocationProgram {
        jobs,
        deferred: admission.deferred.into_iter().map(|j| j.id).collect(),
        horizon_steps: cfg.horizon_steps,
        capacity: snapshot.total_nodes,
        step_hours: cfg.step_hours(),
        encoding,
        big_m: f64::from(snapshot.total_nodes) + f64::from(max_legal) + 1.0,
    })
}

/// Legal counts for raw bounds, shared by the program builder and the
/// simulator's opportunistic starts.
pub fn legal_counts_for_bounds(
    id: &JobId,
    n_min: u32,
    n_max: u32,
    cfg: &ClusterConfig,
) -> Result<Vec<u32>, MilpError> {
    let cap = n_max.min(cfg.total_nodes);
    let set: Vec<u32> = cfg
        .legal_node_counts
        .iter()
        .copied()
        .filter(|&k| k >= n_min && k <= cap)
        .collect();
    if set.is_empty() {
        return Err(MilpError::Domain(DomainError::EmptyLegalSet {
            id: id.clone(),
            n_min,
            n_max,
            total_nodes: cfg.total_nodes,
        }));
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer { upper: u32 },
    Binary,
}

#[derive(Debug, Clone)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    pub sense: Sense,
    pub rhs: f64,
    /// Sparse terms as (variable index, coefficient).
    pub terms: Vec<(usize, f64)>,
}

/// Constraint counts by family, for structural assertions. Each sandwich
/// pair is one two-sided constraint (two scalar rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowCounts {
    pub demand_caps: usize,
    pub node_max: usize,
    pub node_min: usize,
    pub capacity: usize,
    pub sandwich_pairs: usize,
    pub cardinality: usize,
    pub one_hot: usize,
    pub progress: usize,
}

impl AllocationProgram {
    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    fn steps(&self) -> usize {
        self.horizon_steps
    }

    /// Prefix sums of `|K_i|`, used to index per-count variables.
    fn k_prefix(&self) -> Vec<usize> {
        let mut prefix = Vec::with_capacity(self.jobs.len() + 1);
        let mut acc = 0;
        prefix.push(0);
        for job in &self.jobs {
            acc += job.legal_counts.len();
            prefix.push(acc);
        }
        prefix
    }

    fn total_counts(&self) -> usize {
        self.jobs.iter().map(|j| j.legal_counts.len()).sum()
    }

    /// Index of the integer node-count variable for (job, step).
    /// Delta encoding only.
    pub fn idx_n(&self, i: usize, t: usize) -> usize {
        debug_assert_eq!(self.encoding, Encoding::DeltaBigM);
        i * self.steps() + t
    }

    /// Index of the served-demand variable for (job, step).
    pub fn idx_s(&self, i: usize, t: usize) -> usize {
        let base = match self.encoding {
            Encoding::DeltaBigM => self.jobs.len() * self.steps(),
            Encoding::Assignment => self.total_counts() * self.steps(),
        };
        base + i * self.steps() + t
    }

    /// Index of the lower indicator (selected count is an upper bound on
    /// `n`) for (job, step, k-index). Delta encoding only.
    pub fn idx_delta_lo(&self, prefix: &[usize], i: usize, t: usize, j: usize) -> usize {
        debug_assert_eq!(self.encoding, Encoding::DeltaBigM);
        let base = 2 * self.jobs.len() * self.steps();
        base + (prefix[i] * self.steps()) + t * self.jobs[i].legal_counts.len() + j
    }

    /// Index of the upper indicator (selected count is a lower bound on
    /// `n`). Delta encoding only.
    pub fn idx_delta_hi(&self, prefix: &[usize], i: usize, t: usize, j: usize) -> usize {
        let lo = self.idx_delta_lo(prefix, i, t, j);
        lo + self.total_counts() * self.steps()
    }

    /// Index of the one-hot selection binary for (job, step, k-index).
    /// Assignment encoding only.
    pub fn idx_x(&self, prefix: &[usize], i: usize, t: usize, j: usize) -> usize {
        debug_assert_eq!(self.encoding, Encoding::Assignment);
        (prefix[i] * self.steps()) + t * self.jobs[i].legal_counts.len() + j
    }

    /// All decision variables in canonical order (family-major; within a
    /// family jobs in snapshot order, then step, then legal count).
    pub fn variables(&self) -> Vec<Var> {
        let steps = self.steps();
        let mut vars = Vec::new();
        match self.encoding {
            Encoding::DeltaBigM => {
                for (i, job) in self.jobs.iter().enumerate() {
                    let upper = *job.legal_counts.last().unwrap();
                    for t in 0..steps {
                        vars.push(Var {
                            name: var_name('N', i, t, None),
                            kind: VarKind::Integer { upper },
                            objective: 0.0,
                        });
                    }
                }
                for (i, job) in self.jobs.iter().enumerate() {
                    for t in 0..steps {
                        vars.push(Var {
                            name: var_name('S', i, t, None),
                            kind: VarKind::Continuous,
                            objective: 1.0 / job.demand,
                        });
                    }
                }
                for family in ['A', 'B'] {
                    for (i, job) in self.jobs.iter().enumerate() {
                        for t in 0..steps {
                            for j in 0..job.legal_counts.len() {
                                vars.push(Var {
                                    name: var_name(family, i, t, Some(j)),
                                    kind: VarKind::Binary,
                                    objective: 0.0,
                                });
                            }
                        }
                    }
                }
            }
            Encoding::Assignment => {
                for (i, job) in self.jobs.iter().enumerate() {
                    for t in 0..steps {
                        for j in 0..job.legal_counts.len() {
                            vars.push(Var {
                                name: var_name('X', i, t, Some(j)),
                                kind: VarKind::Binary,
                                objective: 0.0,
                            });
                        }
                    }
                }
                for (i, job) in self.jobs.iter().enumerate() {
                    for t in 0..steps {
                        vars.push(Var {
                            name: var_name('S', i, t, None),
                            kind: VarKind::Continuous,
                            objective: 1.0 / job.demand,
                        });
                    }
                }
            }
        }
        vars
    }

    /// All constraint rows in canonical order.
    pub fn rows(&self) -> Vec<Row> {
        match self.encoding {
            Encoding::DeltaBigM => self.rows_delta(),
            Encoding::Assignment => self.rows_assignment(),
        }
    }

    fn rows_delta(&self) -> Vec<Row> {
        let steps = self.steps();
        let prefix = self.k_prefix();
        let p = self.step_hours;
        let m = self.big_m;
        let inv_m = 1.0 / m;
        let mut rows = Vec::new();
        if self.is_empty() {
            return rows;
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                rows.push(Row {
                    name: row_name('D', i, t, None),
                    sense: Sense::Le,
                    rhs: job.demand,
                    terms: vec![(self.idx_s(i, t), 1.0)],
                });
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            let n_max = *job.legal_counts.last().unwrap();
            for t in 0..steps {
                rows.push(Row {
                    name: row_name('U', i, t, None),
                    sense: Sense::Le,
                    rhs: f64::from(n_max),
                    terms: vec![(self.idx_n(i, t), 1.0)],
                });
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            let n_min = job.legal_counts[0];
            for t in 0..steps {
                rows.push(Row {
                    name: row_name('L', i, t, None),
                    sense: Sense::Ge,
                    rhs: f64::from(n_min),
                    terms: vec![(self.idx_n(i, t), 1.0)],
                });
            }
        }
        for t in 0..steps {
            rows.push(Row {
                name: row_name('G', 0, t, None),
                sense: Sense::Le,
                rhs: f64::from(self.capacity),
                terms: (0..self.jobs.len()).map(|i| (self.idx_n(i, t), 1.0)).collect(),
            });
        }
        // Sandwich rows bounding n - k (lower family) and k - n (upper
        // family). With the indicator at 1 the difference is pinned on one
        // side; at 0 the 1/M term forces a strict violation of that side.
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                for (j, &k) in job.legal_counts.iter().enumerate() {
                    let n = self.idx_n(i, t);
                    let lo = self.idx_delta_lo(&prefix, i, t, j);
                    rows.push(Row {
                        name: row_name('E', i, t, Some(j)),
                        sense: Sense::Ge,
                        rhs: f64::from(k) + inv_m,
                        terms: vec![(n, 1.0), (lo, inv_m + m)],
                    });
                    rows.push(Row {
                        name: row_name('F', i, t, Some(j)),
                        sense: Sense::Le,
                        rhs: f64::from(k) + m,
                        terms: vec![(n, 1.0), (lo, m)],
                    });
                }
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                for (j, &k) in job.legal_counts.iter().enumerate() {
                    let n = self.idx_n(i, t);
                    let hi = self.idx_delta_hi(&prefix, i, t, j);
                    rows.push(Row {
                        name: row_name('H', i, t, Some(j)),
                        sense: Sense::Ge,
                        rhs: inv_m - f64::from(k),
                        terms: vec![(n, -1.0), (hi, inv_m + m)],
                    });
                    rows.push(Row {
                        name: row_name('I', i, t, Some(j)),
                        sense: Sense::Le,
                        rhs: m - f64::from(k),
                        terms: vec![(n, -1.0), (hi, m)],
                    });
                }
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                let mut terms = Vec::with_capacity(2 * job.legal_counts.len());
                for j in 0..job.legal_counts.len() {
                    terms.push((self.idx_delta_lo(&prefix, i, t, j), 1.0));
                }
                for j in 0..job.legal_counts.len() {
                    terms.push((self.idx_delta_hi(&prefix, i, t, j), 1.0));
                }
                rows.push(Row {
                    name: row_name('Q', i, t, None),
                    sense: Sense::Eq,
                    rhs: (job.legal_counts.len() + 1) as f64,
                    terms,
                });
            }
        }
        // Progress recursion. The speed coefficient expands over
        // (delta_lo + delta_hi - 1); the constant -1 terms move to the rhs.
        for (i, job) in self.jobs.iter().enumerate() {
            let speed_sum: f64 = job.speeds.iter().sum();
            for t in 0..steps {
                let mut terms = vec![(self.idx_s(i, t), 1.0)];
                if t > 0 {
                    terms.push((self.idx_s(i, t - 1), -1.0));
                }
                for (j, &spd) in job.speeds.iter().enumerate() {
                    terms.push((self.idx_delta_lo(&prefix, i, t, j), -p * spd));
                    terms.push((self.idx_delta_hi(&prefix, i, t, j), -p * spd));
                }
                rows.push(Row {
                    name: row_name('P', i, t, None),
                    sense: Sense::Le,
                    rhs: -p * speed_sum,
                    terms,
                });
            }
        }
        rows
    }

    fn rows_assignment(&self) -> Vec<Row> {
        let steps = self.steps();
        let prefix = self.k_prefix();
        let p = self.step_hours;
        let mut rows = Vec::new();
        if self.is_empty() {
            return rows;
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                rows.push(Row {
                    name: row_name('D', i, t, None),
                    sense: Sense::Le,
                    rhs: job.demand,
                    terms: vec![(self.idx_s(i, t), 1.0)],
                });
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            let n_max = *job.legal_counts.last().unwrap();
            for t in 0..steps {
                let terms = job
                    .legal_counts
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| (self.idx_x(&prefix, i, t, j), f64::from(k)))
                    .collect();
                rows.push(Row {
                    name: row_name('U', i, t, None),
                    sense: Sense::Le,
                    rhs: f64::from(n_max),
                    terms,
                });
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            let n_min = job.legal_counts[0];
            for t in 0..steps {
                let terms = job
                    .legal_counts
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| (self.idx_x(&prefix, i, t, j), f64::from(k)))
                    .collect();
                rows.push(Row {
                    name: row_name('L', i, t, None),
                    sense: Sense::Ge,
                    rhs: f64::from(n_min),
                    terms,
                });
            }
        }
        for t in 0..steps {
            let mut terms = Vec::new();
            for (i, job) in self.jobs.iter().enumerate() {
                for (j, &k) in job.legal_counts.iter().enumerate() {
                    terms.push((self.idx_x(&prefix, i, t, j), f64::from(k)));
                }
            }
            rows.push(Row {
                name: row_name('G', 0, t, None),
                sense: Sense::Le,
                rhs: f64::from(self.capacity),
                terms,
            });
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                let terms = (0..job.legal_counts.len())
                    .map(|j| (self.idx_x(&prefix, i, t, j), 1.0))
                    .collect();
                rows.push(Row {
                    name: row_name('O', i, t, None),
                    sense: Sense::Eq,
                    rhs: 1.0,
                    terms,
                });
            }
        }
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..steps {
                let mut terms = vec![(self.idx_s(i, t), 1.0)];
                if t > 0 {
                    terms.push((self.idx_s(i, t - 1), -1.0));
                }
                for (j, &spd) in job.speeds.iter().enumerate() {
                    terms.push((self.idx_x(&prefix, i, t, j), -p * spd));
                }
                rows.push(Row {
                    name: row_name('P', i, t, None),
                    sense: Sense::Le,
                    rhs: 0.0,
                    terms,
                });
            }
        }
        rows
    }

    pub fn row_counts(&self) -> RowCounts {
        let mut counts = RowCounts::default();
        for row in self.rows() {
            match row.name.as_bytes()[0] {
                b'D' => counts.demand_caps += 1,
                b'U' => counts.node_max += 1,
                b'L' => counts.node_min += 1,
                b'G' => counts.capacity += 1,
                b'E' | b'F' | b'H' | b'I' => counts.sandwich_pairs += 1,
                b'Q' => counts.cardinality += 1,
                b'O' => counts.one_hot += 1,
                b'P' => counts.progress += 1,
                other => unreachable!("unknown row family {}", other as char),
            }
        }
        // Two scalar rows form one sandwich pair.
        counts.sandwich_pairs /= 2;
        counts
    }

    /// Objective value of a raw solution.
    pub fn objective_of(&self, raw: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, job) in self.jobs.iter().enumerate() {
            for t in 0..self.steps() {
                total += raw[self.idx_s(i, t)] / job.demand;
            }
        }
        total
    }

    /// Checks a raw solution against every row, variable bound, and
    /// integrality requirement.
    pub fn check_solution(&self, raw: &[f64], tol: f64) -> Result<(), MilpError> {
        let vars = self.variables();
        if raw.len() != vars.len() {
            return Err(MilpError::SolutionShape { expected: vars.len(), got: raw.len() });
        }
        for (idx, var) in vars.iter().enumerate() {
            let v = raw[idx];
            match var.kind {
                VarKind::Continuous => {
                    if v < -tol {
                        return Err(MilpError::Infeasible {
                            row: var.name.clone(),
                            violation: -v,
                        });
                    }
                }
                VarKind::Integer { upper } => {
                    if (v - v.round()).abs() > INTEGRALITY_TOL {
                        return Err(MilpError::NotIntegral { var: var.name.clone(), value: v });
                    }
                    if v < -tol || v > f64::from(upper) + tol {
                        return Err(MilpError::Infeasible {
                            row: var.name.clone(),
                            violation: v,
                        });
                    }
                }
                VarKind::Binary => {
                    if (v - v.round()).abs() > INTEGRALITY_TOL || v < -tol || v > 1.0 + tol {
                        return Err(MilpError::NotIntegral { var: var.name.clone(), value: v });
                    }
                }
            }
        }
        for row in self.rows() {
            let lhs: f64 = row.terms.iter().map(|&(idx, c)| c * raw[idx]).sum();
            let violation = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            if violation > tol {
                return Err(MilpError::Infeasible { row: row.name, violation });
            }
        }
        Ok(())
    }

    /// Builds the raw solution vector for explicit per-step node counts
    /// (`counts[i][t]`, each a member of job i's legal set), with served
    /// demand completed tightly along the progress recursion.
    pub fn solution_from_node_counts(&self, counts: &[Vec<u32>]) -> Vec<f64> {
        assert_eq!(counts.len(), self.jobs.len());
        let steps = self.steps();
        let prefix = self.k_prefix();
        let vars = self.variables();
        let mut raw = vec![0.0; vars.len()];
        for (i, job) in self.jobs.iter().enumerate() {
            let mut served = 0.0f64;
            for t in 0..steps {
                let k = counts[i][t];
                let j = job
                    .legal_counts
                    .iter()
                    .position(|&c| c == k)
                    .unwrap_or_else(|| panic!("count {k} not legal for job {}", job.id));
                served = (served + self.step_hours * job.speeds[j]).min(job.demand);
                raw[self.idx_s(i, t)] = served;
                match self.encoding {
                    Encoding::DeltaBigM => {
                        raw[self.idx_n(i, t)] = f64::from(k);
                        for (jj, &kk) in job.legal_counts.iter().enumerate() {
                            if k <= kk {
                                raw[self.idx_delta_lo(&prefix, i, t, jj)] = 1.0;
                            }
                            if k >= kk {
                                raw[self.idx_delta_hi(&prefix, i, t, jj)] = 1.0;
                            }
                        }
                    }
                    Encoding::Assignment => {
                        raw[self.idx_x(&prefix, i, t, j)] = 1.0;
                    }
                }
            }
        }
        raw
    }

    /// Recovers an [`EpochPlan`] from a raw solution: validates feasibility,
    /// extracts the uniquely selected count per (job, step), and attaches
    /// zero assignments for deferred jobs.
    pub fn decode(&self, raw: &[f64]) -> Result<EpochPlan, MilpError> {
        self.check_solution(raw, FEASIBILITY_TOL)?;
        let steps = self.steps();
        let prefix = self.k_prefix();
        let mut assignments = BTreeMap::new();
        let mut served_profile = BTreeMap::new();
        for (i, job) in self.jobs.iter().enumerate() {
            let mut per_step = Vec::with_capacity(steps);
            for t in 0..steps {
                let selected: Vec<u32> = match self.encoding {
                    Encoding::DeltaBigM => job
                        .legal_counts
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| {
                            raw[self.idx_delta_lo(&prefix, i, t, j)].round() == 1.0
                                && raw[self.idx_delta_hi(&prefix, i, t, j)].round() == 1.0
                        })
                        .map(|(_, &k)| k)
                        .collect(),
                    Encoding::Assignment => job
                        .legal_counts
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| raw[self.idx_x(&prefix, i, t, j)].round() == 1.0)
                        .map(|(_, &k)| k)
                        .collect(),
                };
                if selected.len() != 1 {
                    return Err(MilpError::AmbiguousSelection {
                        job: job.id.clone(),
                        step: t + 1,
                        candidates: selected.len(),
                    });
                }
                let k = selected[0];
                if self.encoding == Encoding::DeltaBigM {
                    let n = raw[self.idx_n(i, t)];
                    if (n - f64::from(k)).abs() > INTEGRALITY_TOL {
                        return Err(MilpError::AmbiguousSelection {
                            job: job.id.clone(),
                            step: t + 1,
                            candidates: 0,
                        });
                    }
                }
                per_step.push(k);
            }
            let served: Vec<f64> = (0..steps).map(|t| raw[self.idx_s(i, t)]).collect();
            for t in 1..steps {
                if served[t] + FEASIBILITY_TOL < served[t - 1] {
                    return Err(MilpError::PlanInvariant {
                        reason: format!(
                            "served demand for {} decreases at step {}",
                            job.id,
                            t + 1
                        ),
                    });
                }
            }
            assignments.insert(job.id.clone(), per_step);
            served_profile.insert(job.id.clone(), served);
        }
        for id in &self.deferred {
            assignments.insert(id.clone(), vec![0; steps]);
        }
        Ok(EpochPlan {
            objective: self.objective_of(raw),
            assignments,
            served_profile,
            gap: 0.0,
            solve_time_s: 0.0,
        })
    }
}

fn var_name(family: char, i: usize, t: usize, j: Option<usize>) -> String {
    match j {
        Some(j) => format!("{family}{i:04}{:02}{j}", t + 1),
        None => format!("{family}{i:04}{:02}0", t + 1),
    }
}

fn row_name(family: char, i: usize, t: usize, j: Option<usize>) -> String {
    var_name(family, i, t, j)
}

/// Renders the program in MPS format with canonical row/column order. The
/// output is byte-stable for identical programs and accepted by standard
/// MILP solvers (OBJSENSE MAX is emitted; integers carry explicit bounds).
pub fn export_mps(program: &AllocationProgram) -> Result<String, MilpError> {
    if program.jobs.len() > 9999 || program.horizon_steps > 99 {
        return Err(MilpError::TooLargeForExport);
    }
    if program.jobs.iter().any(|j| j.legal_counts.len() > 10) {
        return Err(MilpError::TooLargeForExport);
    }
    let vars = program.variables();
    let rows = program.rows();
    let mut out = String::new();
    out.push_str("NAME          EPOCH\n");
    out.push_str("OBJSENSE\n    MAX\n");
    out.push_str("ROWS\n");
    out.push_str(" N  OBJ\n");
    for row in &rows {
        let tag = match row.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        out.push_str(&format!(" {tag}  {}\n", row.name));
    }
    // Column-major nonzeros.
    let mut columns: Vec<Vec<(String, f64)>> = vec![Vec::new(); vars.len()];
    for (idx, var) in vars.iter().enumerate() {
        if var.objective != 0.0 {
            columns[idx].push(("OBJ".to_string(), var.objective));
        }
    }
    for row in &rows {
        for &(idx, coeff) in &row.terms {
            columns[idx].push((row.name.clone(), coeff));
        }
    }
    out.push_str("COLUMNS\n");
    let mut in_integer_block = false;
    let mut marker = 0usize;
    for (idx, var) in vars.iter().enumerate() {
        let integral = !matches!(var.kind, VarKind::Continuous);
        if integral != in_integer_block {
            let tag = if integral { "'INTORG'" } else { "'INTEND'" };
            out.push_str(&format!(
                "    MARKER{marker:02}  {:<8}  {tag}\n",
                "'MARKER'"
            ));
            marker += 1;
            in_integer_block = integral;
        }
        for (row_name, coeff) in &columns[idx] {
            out.push_str(&format!(
                "    {:<8}  {:<8}  {}\n",
                var.name,
                row_name,
                fmt_num(*coeff)
            ));
        }
    }
    if in_integer_block {
        out.push_str(&format!("    MARKER{marker:02}  {:<8}  'INTEND'\n", "'MARKER'"));
    }
    out.push_str("RHS\n");
    for row in &rows {
        if row.rhs != 0.0 {
            out.push_str(&format!("    RHS       {:<8}  {}\n", row.name, fmt_num(row.rhs)));
        }
    }
    out.push_str("BOUNDS\n");
    for var in &vars {
        match var.kind {
            VarKind::Continuous => {}
            VarKind::Integer { upper } => {
                out.push_str(&format!(" LI BND       {:<8}  0\n", var.name));
                out.push_str(&format!(" UI BND       {:<8}  {upper}\n", var.name));
            }
            VarKind::Binary => {
                out.push_str(&format!(" BV BND       {:<8}\n", var.name));
            }
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

fn fmt_num(v: f64) -> String {
    // Shortest round-trip formatting keeps the file byte-stable and exact.
    let s = format!("{v}");
    if s.len() < 12 {
        format!("{s:<12}")
    } else {
        s
    }
}

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("training jobs alone need {need} nodes at their minima but the pool has {capacity}")]
    TrainingOverCapacity { need: u64, capacity: u32 },
    #[error("planning horizon must have at least one step")]
    EmptyHorizon,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("solution vector has {got} entries, program expects {expected}")]
    SolutionShape { expected: usize, got: usize },
    #[error("constraint {row} violated by {violation:.3e}")]
    Infeasible { row: String, violation: f64 },
    #[error("variable {var} = {value} is not integral")]
    NotIntegral { var: String, value: f64 },
    #[error("job {job} step {step}: {candidates} selected counts instead of exactly one")]
    AmbiguousSelection { job: JobId, step: usize, candidates: usize },
    #[error("decoded plan violates an invariant: {reason}")]
    PlanInvariant { reason: String },
    #[error("program dimensions exceed the MPS naming scheme")]
    TooLargeForExport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ClusterConfig;

    fn snap_job(id: &str, remaining: f64, training: bool, current: u32) -> SnapshotJob {
        SnapshotJob {
            id: JobId::from(id),
            remaining_node_hours: remaining,
            n_min: 1,
            n_max: 16,
            training,
            current_nodes: current,
        }
    }

    fn queued_snapshot(n: usize, total_nodes: u32) -> ClusterSnapshot {
        ClusterSnapshot {
            epoch_s: 0,
            jobs: (0..n).map(|i| snap_job(&format!("j{i}"), 10.0, false, 0)).collect(),
            total_nodes,
        }
    }

    #[test]
    fn admit_all_when_they_fit() {
        let result = admit(&queued_snapshot(4, 4)).unwrap();
        assert_eq!(result.admitted.len(), 4);
        assert!(result.deferred.is_empty());
    }

    #[test]
    fn admit_defers_past_capacity() {
        let result = admit(&queued_snapshot(6, 4)).unwrap();
        assert_eq!(result.admitted.len(), 4);
        assert_eq!(result.deferred.len(), 2);
        let deferred: Vec<&str> = result.deferred.iter().map(|j| j.id.as_str()).collect();
        assert_eq!(deferred, vec!["j4", "j5"]);
    }

    #[test]
    fn admit_skips_and_continues_in_fifo_order() {
        // Training jobs hold their minima (sum 6); queued minima 1, 2, 1.
        let mut jobs = vec![
            snap_job("t1", 20.0, true, 4),
            snap_job("t2", 20.0, true, 2),
            snap_job("q1", 10.0, false, 0),
            snap_job("q2", 10.0, false, 0),
            snap_job("q3", 10.0, false, 0),
        ];
        jobs[0].n_min = 4;
        jobs[1].n_min = 2;
        jobs[3].n_min = 2;
        let snapshot = ClusterSnapshot { epoch_s: 0, jobs, total_nodes: 8 };
        let result = admit(&snapshot).unwrap();
        let admitted: Vec<&str> = result.admitted.iter().map(|j| j.id.as_str()).collect();
        assert_eq!(admitted, vec!["t1", "t2", "q1", "q3"]);
        let deferred: Vec<&str> = result.deferred.iter().map(|j| j.id.as_str()).collect();
        assert_eq!(deferred, vec!["q2"]);

        // No admission that respects the FIFO skip rule packs more minimum
        // nodes within the capacity of 8.
        let queued_minima = [1u64, 2, 1];
        let mut best = 0u64;
        for mask in 0..8u32 {
            let total: u64 = 6 + (0..3)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| queued_minima[b as usize])
                .sum::<u64>();
            if total <= 8 {
                best = best.max(total);
            }
        }
        let ours: u64 = 6 + result
            .admitted
            .iter()
            .filter(|j| !j.training)
            .map(|j| u64::from(j.n_min))
            .sum::<u64>();
        assert_eq!(ours, best);
    }

    #[test]
    fn admit_errors_when_training_jobs_exceed_capacity() {
        let mut jobs = vec![snap_job("t1", 5.0, true, 8), snap_job("t2", 5.0, true, 8)];
        jobs[0].n_min = 8;
        jobs[1].n_min = 8;
        let snapshot = ClusterSnapshot { epoch_s: 0, jobs, total_nodes: 8 };
        assert!(matches!(
            admit(&snapshot),
            Err(MilpError::TrainingOverCapacity { need: 16, capacity: 8 })
        ));
    }

    fn one_job_program(encoding: Encoding) -> AllocationProgram {
        let cfg = ClusterConfig { total_nodes: 70, ..ClusterConfig::default() };
        let snapshot = ClusterSnapshot {
            epoch_s: 0,
            jobs: vec![snap_job("j0", 10.0, false, 0)],
            total_nodes: 70,
        };
        build(&snapshot, &cfg, encoding).unwrap()
    }

    #[test]
    fn delta_program_has_expected_shape() {
        let program = one_job_program(Encoding::DeltaBigM);
        let vars = program.variables();
        let integers =
            vars.iter().filter(|v| matches!(v.kind, VarKind::Integer { .. })).count();
        let continuous =
            vars.iter().filter(|v| matches!(v.kind, VarKind::Continuous)).count();
        let binaries = vars.iter().filter(|v| matches!(v.kind, VarKind::Binary)).count();
        assert_eq!(integers, 5);
        assert_eq!(continuous, 5);
        assert_eq!(binaries, 50);

        let counts = program.row_counts();
        assert_eq!(counts.demand_caps, 5);
        assert_eq!(counts.node_max, 5);
        assert_eq!(counts.node_min, 5);
        assert_eq!(counts.capacity, 5);
        assert_eq!(counts.sandwich_pairs, 50); // 2 families x 5 counts x 5 steps
        assert_eq!(counts.cardinality, 5);
        assert_eq!(counts.progress, 5);
        assert_eq!(counts.one_hot, 0);
    }

    #[test]
    fn assignment_program_halves_the_binaries() {
        let program = one_job_program(Encoding::Assignment);
        let vars = program.variables();
        let binaries = vars.iter().filter(|v| matches!(v.kind, VarKind::Binary)).count();
        assert_eq!(binaries, 25);
        let counts = program.row_counts();
        assert_eq!(counts.one_hot, 5);
        assert_eq!(counts.sandwich_pairs, 0);
    }

    #[test]
    fn empty_snapshot_builds_empty_program() {
        let cfg = ClusterConfig::default();
        let snapshot = ClusterSnapshot { epoch_s: 0, jobs: vec![], total_nodes: 70 };
        let program = build(&snapshot, &cfg, Encoding::DeltaBigM).unwrap();
        assert!(program.is_empty());
        assert!(program.variables().is_empty());
        assert!(program.rows().is_empty());
        let plan = program.decode(&[]).unwrap();
        assert_eq!(plan.objective, 0.0);
    }

    #[test]
    fn big_m_dominates_pool_and_counts() {
        let program = one_job_program(Encoding::DeltaBigM);
        assert!(program.big_m >= 16.0 + 70.0);
    }

    #[test]
    fn sandwich_pattern_for_interior_count() {
        // Selecting n = 4 from K = {1,2,4,8,16} must mark the lower
        // indicator on {4,8,16} and the upper indicator on {1,2,4}, with
        // 6 = |K|+1 indicators set in total.
        let program = one_job_program(Encoding::DeltaBigM);
        let raw = program.solution_from_node_counts(&[vec![4, 4, 4, 4, 4]]);
        program.check_solution(&raw, FEASIBILITY_TOL).unwrap();
        let prefix = program.k_prefix();
        let lo: Vec<f64> =
            (0..5).map(|j| raw[program.idx_delta_lo(&prefix, 0, 0, j)]).collect();
        let hi: Vec<f64> =
            (0..5).map(|j| raw[program.idx_delta_hi(&prefix, 0, 0, j)]).collect();
        assert_eq!(lo, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(hi, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        let total: f64 = lo.iter().chain(hi.iter()).sum();
        assert_eq!(total, 6.0);
    }

    #[test]
    fn sandwich_pattern_for_minimum_count() {
        let program = one_job_program(Encoding::DeltaBigM);
        let raw = program.solution_from_node_counts(&[vec![1; 5]]);
        program.check_solution(&raw, FEASIBILITY_TOL).unwrap();
        let prefix = program.k_prefix();
        let lo: Vec<f64> =
            (0..5).map(|j| raw[program.idx_delta_lo(&prefix, 0, 0, j)]).collect();
        let hi: Vec<f64> =
            (0..5).map(|j| raw[program.idx_delta_hi(&prefix, 0, 0, j)]).collect();
        assert_eq!(lo, vec![1.0; 5]);
        assert_eq!(hi, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn speed_expansion_recovers_exact_speed() {
        // The indicator expansion of the speed coefficient must equal the
        // selected count's speed with zero error, for every selection.
        let program = one_job_program(Encoding::DeltaBigM);
        let job = &program.jobs[0];
        for (sel, &k_sel) in job.legal_counts.iter().enumerate() {
            let mut coeff = 0.0;
            for (j, &k) in job.legal_counts.iter().enumerate() {
                let lo = if k_sel <= k { 1.0 } else { 0.0 };
                let hi = if k_sel >= k { 1.0 } else { 0.0 };
                coeff += job.speeds[j] * (lo + hi - 1.0);
            }
            assert_eq!(coeff, job.speeds[sel], "selection k={k_sel}");
        }
    }

    #[test]
    fn decode_recovers_counts_and_served() {
        let program = one_job_program(Encoding::Assignment);
        let raw = program.solution_from_node_counts(&[vec![16, 8, 4, 2, 1]]);
        let plan = program.decode(&raw).unwrap();
        assert_eq!(plan.assignments[&JobId::from("j0")], vec![16, 8, 4, 2, 1]);
        let served = &plan.served_profile[&JobId::from("j0")];
        let p = 300.0 / 3600.0;
        assert!((served[0] - p * 6.5536).abs() < 1e-12);
        assert!((served[1] - p * (6.5536 + 4.096)).abs() < 1e-12);
        // Recovered speed at the selected count is exact regardless of the
        // other indicator values.
        assert!((plan.objective - served.iter().sum::<f64>() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_infeasible_capacity() {
        let cfg = ClusterConfig { total_nodes: 4, ..ClusterConfig::default() };
        let snapshot = ClusterSnapshot {
            epoch_s: 0,
            jobs: vec![snap_job("a", 10.0, false, 0), snap_job("b", 10.0, false, 0)],
            total_nodes: 4,
        };
        let program = build(&snapshot, &cfg, Encoding::Assignment).unwrap();
        let raw = program.solution_from_node_counts(&[vec![4; 5], vec![4; 5]]);
        assert!(matches!(
            program.decode(&raw),
            Err(MilpError::Infeasible { .. })
        ));
    }

    #[test]
    fn deferred_jobs_decode_to_zero() {
        let cfg = ClusterConfig { total_nodes: 2, ..ClusterConfig::default() };
        let snapshot = ClusterSnapshot {
            epoch_s: 0,
            jobs: vec![
                snap_job("a", 10.0, false, 0),
                snap_job("b", 10.0, false, 0),
                snap_job("c", 10.0, false, 0),
            ],
            total_nodes: 2,
        };
        let program = build(&snapshot, &cfg, Encoding::Assignment).unwrap();
        assert_eq!(program.jobs.len(), 2);
        assert_eq!(program.deferred, vec![JobId::from("c")]);
        let raw = program.solution_from_node_counts(&[vec![1; 5], vec![1; 5]]);
        let plan = program.decode(&raw).unwrap();
        assert_eq!(plan.assignments[&JobId::from("c")], vec![0; 5]);
    }

    #[test]
    fn mps_export_is_stable_and_structured() {
        let program = one_job_program(Encoding::DeltaBigM);
        let a = export_mps(&program).unwrap();
        let b = export_mps(&program).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("NAME"));
        assert!(a.contains("OBJSENSE"));
        assert!(a.contains("'INTORG'"));
        assert!(a.contains("'INTEND'"));
        assert!(a.contains(" BV BND"));
        assert!(a.ends_with("ENDATA\n"));
        // One ROWS entry per materialized row plus the objective.
        let row_lines = a
            .lines()
            .skip_while(|l| !l.starts_with("ROWS"))
            .skip(1)
            .take_while(|l| !l.starts_with("COLUMNS"))
            .count();
        assert_eq!(row_lines, program.rows().len() + 1);
    }
}
