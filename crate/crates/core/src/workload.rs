//! Job-trace ingestion and synthetic trace generation.
//!
//! Traces are CSV files with a version comment, a header, and one row per
//! job:
//!
//! ```text
//! # trace-v1
//! job_id,submit_s,demand_node_hours,n_min,n_max,failure
//! j00001,12,3.25,1,16,none
//! j00002,340,0.05,1,8,bug:120
//! j00003,900,7.5,1,16,kill:4000
//! ```
//!
//! Rows must be sorted by submit time (ties by id) with unique ids; demand
//! round-trips exactly through the shortest-round-trip float formatting.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FailureKind, JobId, JobSpec, MAX_BUG_HANG_S};

pub const TRACE_VERSION_LINE: &str = "# trace-v1";
pub const TRACE_HEADER: &str = "job_id,submit_s,demand_node_hours,n_min,n_max,failure";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Validation { line: usize, reason: String },
    #[error("line {line}: rows out of order (submit {found} after {previous})")]
    Unsorted { line: usize, previous: u64, found: u64 },
    #[error("line {line}: duplicate job id {id}")]
    DuplicateId { line: usize, id: JobId },
    #[error("io error reading trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses and validates a trace document.
pub fn load_trace(text: &str) -> Result<Vec<JobSpec>, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, version) = lines
        .next()
        .ok_or(TraceError::Parse { line: 1, reason: "empty trace".into() })?;
    if version.trim() != TRACE_VERSION_LINE {
        return Err(TraceError::Parse {
            line: 1,
            reason: format!("expected version line `{TRACE_VERSION_LINE}`"),
        });
    }
    let (_, header) = lines
        .next()
        .ok_or(TraceError::Parse { line: 2, reason: "missing header".into() })?;
    if header.trim() != TRACE_HEADER {
        return Err(TraceError::Parse {
            line: 2,
            reason: format!("expected header `{TRACE_HEADER}`"),
        });
    }
    let mut jobs: Vec<JobSpec> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(TraceError::Parse {
                line,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let id = JobId::new(fields[0]);
        let submit_s: u64 = fields[1].parse().map_err(|_| TraceError::Parse {
            line,
            reason: format!("bad submit_s `{}`", fields[1]),
        })?;
        let demand_node_hours: f64 = fields[2].parse().map_err(|_| TraceError::Parse {
            line,
            reason: format!("bad demand `{}`", fields[2]),
        })?;
        let n_min: u32 = fields[3].parse().map_err(|_| TraceError::Parse {
            line,
            reason: format!("bad n_min `{}`", fields[3]),
        })?;
        let n_max: u32 = fields[4].parse().map_err(|_| TraceError::Parse {
            line,
            reason: format!("bad n_max `{}`", fields[4]),
        })?;
        let failure = parse_failure(fields[5])
            .ok_or_else(|| TraceError::Parse {
                line,
                reason: format!("bad failure `{}`", fields[5]),
            })?;
        let spec = JobSpec { id, submit_s, demand_node_hours, n_min, n_max, failure };
        spec.validate().map_err(|e| TraceError::Validation { line, reason: e.to_string() })?;
        if !seen.insert(spec.id.clone()) {
            return Err(TraceError::DuplicateId { line, id: spec.id });
        }
        if let Some(prev) = jobs.last() {
            if spec.submit_s < prev.submit_s {
                return Err(TraceError::Unsorted {
                    line,
                    previous: prev.submit_s,
                    found: spec.submit_s,
                });
            }
        }
        jobs.push(spec);
    }
    Ok(jobs)
}

pub fn load_trace_file(path: impl AsRef<Path>) -> Result<Vec<JobSpec>, TraceError> {
    load_trace(&std::fs::read_to_string(path)?)
}

fn parse_failure(field: &str) -> Option<FailureKind> {
    if field == "none" {
        return Some(FailureKind::None);
    }
    if let Some(rest) = field.strip_prefix("bug:") {
        return rest.parse().ok().map(|hang_after_s| FailureKind::Bug { hang_after_s });
    }
    if let Some(rest) = field.strip_prefix("kill:") {
        return rest.parse().ok().map(|kill_after_s| FailureKind::UserTerminate { kill_after_s });
    }
    None
}

fn format_failure(failure: FailureKind) -> String {
    match failure {
        FailureKind::None => "none".to_string(),
        FailureKind::Bug { hang_after_s } => format!("bug:{hang_after_s}"),
        FailureKind::UserTerminate { kill_after_s } => format!("kill:{kill_after_s}"),
    }
}

/// Renders jobs back to the trace format; `load_trace` recovers them
/// field-exactly.
pub fn write_trace(jobs: &[JobSpec]) -> String {
    let mut out = String::new();
    out.push_str(TRACE_VERSION_LINE);
    out.push('\n');
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for job in jobs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            job.id,
            job.submit_s,
            job.demand_node_hours,
            job.n_min,
            job.n_max,
            format_failure(job.failure)
        ));
    }
    out
}

pub fn write_trace_file(path: impl AsRef<Path>, jobs: &[JobSpec]) -> Result<(), TraceError> {
    std::fs::write(path, write_trace(jobs))?;
    Ok(())
}

/// Parameters for synthetic trace generation: memoryless arrivals and a
/// two-class duration mixture (short jobs uniform below a cutoff, long jobs
/// lognormal around a target mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub count: usize,
    pub arrival_rate_per_hour: f64,
    /// Mean duration of the long-job class, minutes at single-node speed.
    pub large_mean_minutes: f64,
    /// Lognormal shape of the long-job class.
    pub large_sigma: f64,
    /// Fraction of jobs drawn from the short class.
    pub small_fraction: f64,
    /// Upper edge of the short class, minutes.
    pub small_cutoff_minutes: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// Fraction of jobs annotated with a scripted hang.
    pub bug_fraction: f64,
    /// Fraction of jobs annotated with a scripted user termination.
    pub terminate_fraction: f64,
}

impl SyntheticProfile {
    /// Long-running jobs only: 447 jobs arriving at ~9/hour averaging
    /// 232.6 minutes of single-node work.
    pub fn baseline() -> Self {
        SyntheticProfile {
            count: 447,
            arrival_rate_per_hour: 9.0,
            large_mean_minutes: 232.6,
            large_sigma: 1.0,
            small_fraction: 0.0,
            small_cutoff_minutes: 5.0,
            n_min: 1,
            n_max: 16,
            bug_fraction: 0.0,
            terminate_fraction: 0.0,
        }
    }

    /// The full mixed population: 1252 jobs, 64% of them under five
    /// minutes, arriving at ~25/hour.
    pub fn heterogeneous() -> Self {
        SyntheticProfile {
            count: 1252,
            arrival_rate_per_hour: 25.0,
            small_fraction: 0.64,
            ..SyntheticProfile::baseline()
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |reason: &str| TraceError::Validation { line: 0, reason: reason.into() };
        if self.arrival_rate_per_hour <= 0.0 {
            return Err(bad("arrival rate must be positive"));
        }
        if self.large_mean_minutes <= 0.0 || self.large_sigma <= 0.0 {
            return Err(bad("long-job distribution parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&self.small_fraction) {
            return Err(bad("small_fraction must be in [0, 1]"));
        }
        if self.small_cutoff_minutes <= 0.0 {
            return Err(bad("small_cutoff_minutes must be positive"));
        }
        if self.bug_fraction < 0.0
            || self.terminate_fraction < 0.0
            || self.bug_fraction + self.terminate_fraction > 1.0
        {
            return Err(bad("failure fractions must be nonnegative and sum to at most 1"));
        }
        Ok(())
    }
}

/// Generates a trace from the profile. Deterministic for a given seed: a
/// fixed-algorithm generator (ChaCha8) drives arrivals, durations, and
/// failure annotations in a fixed draw order.
pub fn generate(profile: &SyntheticProfile, seed: u64) -> Result<Vec<JobSpec>, TraceError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter_arrival = Exp::new(profile.arrival_rate_per_hour / 3600.0)
        .expect("positive rate");
    let mu = profile.large_mean_minutes.ln() - profile.large_sigma * profile.large_sigma / 2.0;
    let large = LogNormal::new(mu, profile.large_sigma).expect("valid lognormal");
    let width = (profile.count.max(1) as f64).log10().ceil().max(5.0) as usize;

    let mut jobs = Vec::with_capacity(profile.count);
    let mut clock = 0.0f64;
    for i in 0..profile.count {
        clock += inter_arrival.sample(&mut rng);
        let minutes = if rng.random::<f64>() < profile.small_fraction {
            // Uniform over (0, cutoff]; avoid a zero-demand job.
            profile.small_cutoff_minutes * rng.random::<f64>().max(1e-9)
        } else {
            large.sample(&mut rng)
        };
        let failure_roll: f64 = rng.random();
        let failure = if failure_roll < profile.bug_fraction {
            let hang = (rng.random::<f64>() * MAX_BUG_HANG_S as f64).ceil() as u64;
            FailureKind::Bug { hang_after_s: hang.clamp(1, MAX_BUG_HANG_S) }
        } else if failure_roll < profile.bug_fraction + profile.terminate_fraction {
            let duration_s = (minutes * 60.0).max(1.0);
            let kill = (rng.random::<f64>() * duration_s).ceil() as u64;
            FailureKind::UserTerminate { kill_after_s: kill.max(1) }
        } else {
            FailureKind::None
        };
        jobs.push(JobSpec {
            id: JobId::new(format!("j{i:0width$}")),
            submit_s: clock as u64,
            demand_node_hours: minutes / 60.0,
            n_min: profile.n_min,
            n_max: profile.n_max,
            failure,
        });
    }
    Ok(jobs)
}

/// Re-annotates failures on an existing trace at the given fractions,
/// leaving everything else identical. Used by the harsh robustness scenario
/// so both allocators replay one failure schedule.
pub fn annotate_failures(
    jobs: &[JobSpec],
    bug_fraction: f64,
    terminate_fraction: f64,
    seed: u64,
) -> Vec<JobSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jobs.iter()
        .map(|job| {
            let roll: f64 = rng.random();
            let failure = if roll < bug_fraction {
                let hang = (rng.random::<f64>() * MAX_BUG_HANG_S as f64).ceil() as u64;
                FailureKind::Bug { hang_after_s: hang.clamp(1, MAX_BUG_HANG_S) }
            } else if roll < bug_fraction + terminate_fraction {
                let duration_s = (job.demand_node_hours * 3600.0).max(1.0);
                let kill = (rng.random::<f64>() * duration_s).ceil() as u64;
                FailureKind::UserTerminate { kill_after_s: kill.max(1) }
            } else {
                FailureKind::None
            };
            JobSpec { failure, ..job.clone() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_row() {
        let text = format!("{TRACE_VERSION_LINE}\n{TRACE_HEADER}\nj1,0,2.5,1,16,none\n");
        let jobs = load_trace(&text).unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(jobs[0].id.as_str(), "j1");
        assert_eq!(jobs[0].submit_s, 0);
        assert_eq!(jobs[0].demand_node_hours, 2.5);
        assert_eq!(jobs[0].n_min, 1);
        assert_eq!(jobs[0].n_max, 16);
        assert_eq!(jobs[0].failure, FailureKind::None);
    }

    #[test]
    fn rejects_out_of_order_rows() {
        let text =
            format!("{TRACE_VERSION_LINE}\n{TRACE_HEADER}\nj1,100,1,1,16,none\nj2,50,1,1,16,none\n");
        match load_trace(&text) {
            Err(TraceError::Unsorted { line, previous, found }) => {
                assert_eq!(line, 4);
                assert_eq!(previous, 100);
                assert_eq!(found, 50);
            }
            other => panic!("expected unsorted error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_power_of_two_bounds() {
        let text = format!("{TRACE_VERSION_LINE}\n{TRACE_HEADER}\nj1,0,1,1,12,none\n");
        assert!(matches!(load_trace(&text), Err(TraceError::Validation { line: 3, .. })));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text =
            format!("{TRACE_VERSION_LINE}\n{TRACE_HEADER}\nj1,0,1,1,16,none\nj1,5,1,1,16,none\n");
        assert!(matches!(load_trace(&text), Err(TraceError::DuplicateId { .. })));
    }

    #[test]
    fn parses_failure_annotations() {
        let text = format!(
            "{TRACE_VERSION_LINE}\n{TRACE_HEADER}\nj1,0,1,1,16,bug:120\nj2,5,1,1,16,kill:900\n"
        );
        let jobs = load_trace(&text).unwrap();
        assert_eq!(jobs[0].failure, FailureKind::Bug { hang_after_s: 120 });
        assert_eq!(jobs[1].failure, FailureKind::UserTerminate { kill_after_s: 900 });
    }

    #[test]
    fn round_trip_is_field_exact() {
        let jobs = generate(
            &SyntheticProfile {
                count: 50,
                bug_fraction: 0.2,
                terminate_fraction: 0.1,
                small_fraction: 0.5,
                ..SyntheticProfile::baseline()
            },
            99,
        )
        .unwrap();
        let text = write_trace(&jobs);
        let reloaded = load_trace(&text).unwrap();
        assert_eq!(jobs, reloaded);
    }

    #[test]
    fn generation_is_deterministic() {
        let profile = SyntheticProfile::baseline();
        let a = generate(&profile, 7).unwrap();
        let b = generate(&profile, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&profile, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_profile_yields_empty_trace() {
        let profile = SyntheticProfile { count: 0, ..SyntheticProfile::baseline() };
        assert!(generate(&profile, 1).unwrap().is_empty());
    }

    #[test]
    fn baseline_mean_duration_tracks_target() {
        // Sample mean over several seeds should sit near the configured
        // long-job mean (within 10%).
        let profile = SyntheticProfile::baseline();
        let mut total = 0.0;
        let mut n = 0usize;
        for seed in 0..20 {
            for job in generate(&profile, seed).unwrap() {
                total += job.demand_node_hours * 60.0;
                n += 1;
            }
        }
        let mean = total / n as f64;
        assert!(
            (mean - profile.large_mean_minutes).abs() / profile.large_mean_minutes < 0.10,
            "seed-averaged mean {mean:.1} min vs target {}",
            profile.large_mean_minutes
        );
    }

    #[test]
    fn heterogeneous_small_fraction_tracks_target() {
        let profile = SyntheticProfile::heterogeneous();
        let mut small = 0usize;
        let mut n = 0usize;
        for seed in 0..10 {
            for job in generate(&profile, seed).unwrap() {
                if job.demand_node_hours * 60.0 < profile.small_cutoff_minutes {
                    small += 1;
                }
                n += 1;
            }
        }
        let fraction = small as f64 / n as f64;
        assert!(
            (fraction - 0.64).abs() < 0.03,
            "small-job fraction {fraction:.3} vs target 0.64"
        );
    }

    #[test]
    fn annotation_fractions_land_close() {
        let jobs = generate(&SyntheticProfile::baseline(), 3).unwrap();
        let harsh = annotate_failures(&jobs, 0.15, 0.10, 11);
        let bugs =
            harsh.iter().filter(|j| matches!(j.failure, FailureKind::Bug { .. })).count();
        let kills = harsh
            .iter()
            .filter(|j| matches!(j.failure, FailureKind::UserTerminate { .. }))
            .count();
        let n = harsh.len() as f64;
        assert!((bugs as f64 / n - 0.15).abs() < 0.05);
        assert!((kills as f64 / n - 0.10).abs() < 0.05);
        // Everything except the failure field is untouched.
        for (a, b) in jobs.iter().zip(&harsh) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.submit_s, b.submit_s);
            assert_eq!(a.demand_node_hours, b.demand_node_hours);
        }
    }
}
