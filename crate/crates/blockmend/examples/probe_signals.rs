//! Probe buggy projects against their gold references and watch the raw
//! measurements compress into the controller's scheduling signal.

use blockmend::controller::{compute_signals, escalates, ControllerConfig, ControllerMode};
use blockmend::project::ProjectDocument;
use blockmend::vm::verify::{default_probe_schedule, probe};

fn main() {
    let config = ControllerConfig::default_with_seed(ControllerMode::Heuristic, 42);
    let budget = default_probe_schedule(42);
    println!(
        "probe budget: {} ticks x {} reruns, thresholds: early<=tick {}, broad>={}, unstable>{}\n",
        budget.ticks,
        budget.reruns,
        config.thresholds.early_tick_max,
        config.thresholds.broad_mismatch_min,
        config.thresholds.instability_min,
    );

    for fixture in blockmend::fixtures::demo_cases() {
        let buggy = ProjectDocument::new(fixture.buggy.clone()).unwrap();
        let gold = ProjectDocument::new(fixture.gold.clone()).unwrap();
        let suite = serde_json::from_value(fixture.suite.clone()).unwrap();
        let report = probe(&buggy, &gold, &suite, &budget).expect("gold passes its suite");
        let signal = compute_signals(&report, &config);
        println!("{}:", fixture.case_id);
        println!(
            "  pass_rate {:.2}  mismatch {:.3}  instability {:.2}  first_divergence {:?}  snapshots {}",
            report.buggy_pass_rate,
            report.mismatch_rate,
            report.rerun_instability,
            report.first_divergence_tick,
            report.snapshots.len(),
        );
        println!(
            "  signal: divergence={:?} mismatch={:?} stability={:?} pass_gap={:.2}  -> {}",
            signal.divergence,
            signal.mismatch,
            signal.stability,
            signal.pass_gap,
            if escalates(&signal) { "escalate to multimodal" } else { "stay text-only" },
        );
    }
}
