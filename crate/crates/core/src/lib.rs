//! Node allocation for elastic training clusters: a rolling-horizon MILP
//! allocator, the rule-based greedy baseline, and a deterministic
//! second-stepped cluster simulator for comparing the two on job traces.
//!
//! The crate is organized around the lifecycle of an experiment:
//!
//! - [`workload`] loads or synthesizes job traces;
//! - [`sim`] replays a trace second by second, invoking an allocator at
//!   every epoch boundary;
//! - [`milp`] assembles the per-epoch allocation program in two
//!   interchangeable encodings, and [`solver`] optimizes it with an exact
//!   enumeration oracle or branch-and-bound;
//! - [`greedy`] implements the four-scenario rule-based baseline;
//! - [`experiments`] sweeps node counts and allocators over paired traces
//!   and aggregates the comparison metrics.
//!
//! All randomness is seeded; identical inputs produce identical outputs.

pub mod domain;
pub mod experiments;
pub mod greedy;
pub mod milp;
pub mod par;
pub mod sim;
pub mod solver;
pub mod speed;
pub mod workload;

pub use domain::{
    ClusterConfig, ClusterSnapshot, EpochPlan, FailureKind, JobId, JobPhase, JobRuntimeState,
    JobSpec, SnapshotJob,
};
pub use greedy::{GreedyDecision, TrainingTimeMetric};
pub use milp::{AllocationProgram, Encoding};
pub use sim::{AllocatorKind, SimulationConfig, SimulationReport};
pub use solver::{SolveResult, SolveStatus, SolverBudget};
pub use speed::SpeedCurve;
pub use workload::SyntheticProfile;
