//! Rule-based benchmark allocator. At each activation it dispatches on
//! whether idle nodes exist and whether jobs are queued:
//!
//! 1. idle nodes and a queue: start the front queued job on as many nodes
//!    as fit, repeating until the queue or the idle pool runs out;
//! 2. idle nodes, no queue: scale up the training job with the shortest
//!    training time as far as possible, repeating over remaining jobs;
//! 3. no idle nodes and a queue: halve the training job with the longest
//!    training time and hand the released nodes to the front queued job;
//! 4. no idle nodes, no queue: change nothing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{ClusterConfig, ClusterSnapshot, JobId};
use crate::milp::legal_counts_for_bounds;

/// How scenario 2/3 rank training jobs. The scenarios speak of "training
/// time"; elapsed wall-clock is the default reading, remaining ETA is kept
/// selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TrainingTimeMetric {
    #[default]
    Elapsed,
    RemainingEta,
}

/// Node-count changes decided by one greedy activation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GreedyDecision {
    pub scale_ups: BTreeMap<JobId, u32>,
    pub scale_downs: BTreeMap<JobId, u32>,
    pub starts: BTreeMap<JobId, u32>,
    pub unchanged: BTreeSet<JobId>,
}

impl GreedyDecision {
    pub fn is_noop(&self) -> bool {
        self.scale_ups.is_empty() && self.scale_downs.is_empty() && self.starts.is_empty()
    }
}

/// One greedy activation over the snapshot. `elapsed_training` must cover
/// every training job (seconds since it began training).
pub fn greedy_plan(
    snapshot: &ClusterSnapshot,
    cfg: &ClusterConfig,
    elapsed_training: &BTreeMap<JobId, u64>,
    metric: TrainingTimeMetric,
) -> GreedyDecision {
    let mut decision = GreedyDecision::default();
    let mut idle = snapshot.idle_nodes();
    let queued: Vec<usize> = (0..snapshot.jobs.len())
        .filter(|&i| !snapshot.jobs[i].training)
        .collect();
    let training: Vec<usize> = (0..snapshot.jobs.len())
        .filter(|&i| snapshot.jobs[i].training)
        .collect();

    // Ranking key: smaller sorts first. Elapsed readings rank by wall-clock
    // seconds; ETA readings by observed remaining demand. Ties on job id.
    let rank = |i: usize| -> (f64, &JobId) {
        let job = &snapshot.jobs[i];
        let value = match metric {
            TrainingTimeMetric::Elapsed => {
                *elapsed_training.get(&job.id).unwrap_or(&0) as f64
            }
            TrainingTimeMetric::RemainingEta => job.remaining_node_hours,
        };
        (value, &job.id)
    };

    match (idle > 0, !queued.is_empty()) {
        (true, true) => {
            // Scenario 1: drain the queue front-first onto the idle pool.
            for &qi in &queued {
                if idle == 0 {
                    break;
                }
                let job = &snapshot.jobs[qi];
                let Ok(legal) = legal_counts_for_bounds(&job.id, job.n_min, job.n_max, cfg)
                else {
                    break;
                };
                let Some(&k) = legal.iter().rev().find(|&&k| k <= idle) else {
                    break; // front job cannot fit; capacity stays fragmented
                };
                decision.starts.insert(job.id.clone(), k);
                idle -= k;
            }
        }
        (true, false) => {
            // Scenario 2: grow the shortest-running jobs into the idle pool.
            let mut candidates = training.clone();
            while idle > 0 && !candidates.is_empty() {
                let pos = (0..candidates.len())
                    .min_by(|&a, &b| {
                        rank(candidates[a]).partial_cmp(&rank(candidates[b])).unwrap()
                    })
                    .unwrap();
                let i = candidates.swap_remove(pos);
                let job = &snapshot.jobs[i];
                let Ok(legal) = legal_counts_for_bounds(&job.id, job.n_min, job.n_max, cfg)
                else {
                    continue;
                };
                let reach = job.current_nodes + idle;
                if let Some(&k) = legal.iter().rev().find(|&&k| k <= reach) {
                    if k > job.current_nodes {
                        decision.scale_ups.insert(job.id.clone(), k);
                        idle -= k - job.current_nodes;
                    }
                }
            }
        }
        (false, true) => {
            // Scenario 3: one halving funds one start. Jobs already at
            // their minimum are exempt; if the front queued job cannot use
            // the released nodes, nothing changes.
            let victim = training
                .iter()
                .copied()
                .filter(|&i| {
                    let job = &snapshot.jobs[i];
                    job.current_nodes > job.n_min && job.current_nodes > 1
                })
                .max_by(|&a, &b| rank(a).partial_cmp(&rank(b)).unwrap());
            if let Some(vi) = victim {
                let victim_job = &snapshot.jobs[vi];
                let halved = victim_job.current_nodes / 2;
                let released = victim_job.current_nodes - halved;
                let front = &snapshot.jobs[queued[0]];
                if let Ok(legal) =
                    legal_counts_for_bounds(&front.id, front.n_min, front.n_max, cfg)
                {
                    if let Some(&k) = legal.iter().rev().find(|&&k| k <= released) {
                        decision.scale_downs.insert(victim_job.id.clone(), halved);
                        decision.starts.insert(front.id.clone(), k);
                    }
                }
            }
        }
        (false, false) => {} // Scenario 4: identity.
    }

    for &i in &training {
        let id = &snapshot.jobs[i].id;
        if !decision.scale_ups.contains_key(id) && !decision.scale_downs.contains_key(id) {
            decision.unchanged.insert(id.clone());
        }
    }
    decision
}
