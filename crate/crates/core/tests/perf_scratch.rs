use std::time::Instant;

use elastic_sched::experiments::{
    run_experiment, ExperimentSpec, Scenario, TraceSource,
};
use elastic_sched::workload::SyntheticProfile;

fn spec(seed: u64, scenario: Scenario, nodes: Vec<u32>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::baseline_sweep(
        TraceSource::Profile(SyntheticProfile::baseline()),
        seed,
    );
    spec.scenario = scenario;
    spec.node_counts = nodes;
    spec
}

#[test]
#[ignore]
fn scout_scenarios() {
    let mid: Vec<u32> = vec![90, 110, 130, 150];
    for seed in [1u64, 2, 3] {
        let start = Instant::now();
        let full: Vec<u32> = (70..=190).step_by(20).collect();
        let baseline = run_experiment(&spec(seed, Scenario::Baseline, full)).unwrap();
        println!("=== seed {seed} (baseline sweep {:.0}s) ===", start.elapsed().as_secs_f64());
        for n in [70u32, 90, 110, 130, 150, 170, 190] {
            let g = baseline.cell(n, elastic_sched::sim::AllocatorKind::Greedy).unwrap();
            let o = baseline.cell(n, elastic_sched::sim::AllocatorKind::Optimal).unwrap();
            let row = baseline.milestone_row(n).unwrap();
            println!(
                "N={n:3}: queue g={:.3} o={:.3} min | extra mean {:.2} per-milestone {:?}",
                g.mean_queue_minutes, o.mean_queue_minutes, row.mean, row.per_milestone
            );
        }
        let adv = |r: &elastic_sched::experiments::ComparisonReport| -> f64 {
            mid.iter().map(|&n| r.milestone_row(n).unwrap().mean).sum::<f64>() / mid.len() as f64
        };
        let clean = run_experiment(&spec(seed, Scenario::Baseline, mid.clone())).unwrap();
        let disturbed = run_experiment(&spec(seed, Scenario::Disturbance, mid.clone())).unwrap();
        let harsh = run_experiment(&spec(seed, Scenario::Harsh, mid.clone())).unwrap();
        let delayed = run_experiment(&spec(seed, Scenario::ScalingDelay, mid.clone())).unwrap();
        println!(
            "advantages: clean {:.3} disturbed {:.3} (ratio {:.2}) harsh {:.3} delay15 {:.3} (ratio {:.2})",
            adv(&clean),
            adv(&disturbed),
            adv(&disturbed) / adv(&clean),
            adv(&harsh),
            adv(&delayed),
            adv(&delayed) / adv(&clean),
        );
        if let Some(l) = &baseline.latency {
            println!(
                "latency: n={} mean {:.3} median {:.3} p95 {:.3} max {:.3}",
                l.samples, l.mean_s, l.median_s, l.p95_s, l.max_s
            );
        }
        println!("seed {seed} total {:.0}s", start.elapsed().as_secs_f64());
    }
}
