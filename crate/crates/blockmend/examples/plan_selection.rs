//! The four controller modes mapping signals and attempt indexes to
//! concrete repair plans.

use blockmend::controller::{
    decide_plan, ControllerConfig, ControllerMode, Divergence, MismatchBreadth, ScheduleSignal,
    Stability,
};

fn main() {
    let quiet = ScheduleSignal {
        divergence: Divergence::Late,
        mismatch: MismatchBreadth::Local,
        stability: Stability::Stable,
        pass_gap: 0.3,
    };
    let loud = ScheduleSignal {
        divergence: Divergence::Early,
        mismatch: MismatchBreadth::Broad,
        stability: Stability::Unstable,
        pass_gap: 0.9,
    };

    for mode in ControllerMode::ALL {
        let config = ControllerConfig::default_with_seed(mode, 7);
        println!("{} ({}):", mode.label(), mode.as_str());
        for (label, signal) in [("quiet signal", &quiet), ("loud signal", &loud)] {
            let plans: Vec<String> = (0..config.max_attempts)
                .map(|attempt| {
                    let p = decide_plan(&config, signal, attempt).unwrap();
                    format!(
                        "{} ({:?}, cap {}, {} snapshots)",
                        p.id, p.evidence, p.max_patch_ops, p.max_snapshots
                    )
                })
                .collect();
            println!("  {label}: {}", plans.join(" -> "));
        }
    }
    println!("\nLadder defaults: P0/P1 text (caps 3/5), P2/P3 multimodal (caps 8/12);");
    println!("heuristic escalates on early divergence, broad mismatch, or rerun instability.");
}
