//! One complete repair trajectory against the deterministic scripted
//! backend: probe, plan, request, patch, staged verification, accounting.

use blockmend::controller::{ControllerConfig, ControllerMode};
use blockmend::fixtures;
use blockmend::trajectory::{run_trajectory, RepairCase};

fn main() {
    let root = std::env::temp_dir().join("blockmend-trajectory-demo");
    let _ = std::fs::remove_dir_all(&root);
    let ws = fixtures::write_demo_workspace(&root).expect("demo workspace");

    let case = RepairCase::load(&ws.cases_dir.join("broadcast-wiring")).expect("fixture loads");
    let endpoint = fixtures::demo_endpoints(&ws.replies_path).remove(0);
    let config = ControllerConfig::default_with_seed(ControllerMode::Heuristic, 0xB10C);

    let out = root.join("out");
    let record = run_trajectory(&case, &endpoint, &config, 0xB10C, &out).expect("trajectory runs");

    println!("case {} under {} / {}:", record.case_id, record.model_id, record.mode.as_str());
    println!(
        "  probe: mismatch {:.3}, first divergence {:?}, {} snapshots",
        record.probe.mismatch_rate, record.probe.first_divergence_tick, record.probe.snapshot_count
    );
    println!(
        "  signal: {:?}/{:?}/{:?}",
        record.signal.divergence, record.signal.mismatch, record.signal.stability
    );
    for a in &record.attempts {
        println!(
            "  attempt {} [{}]: {:?} (ops {:?}, {} images, {} in / {} out tokens, ${:.5})",
            a.attempt_index,
            a.plan_id,
            a.outcome,
            a.patch_op_count,
            a.payload_audit.images_sent,
            a.input_tokens,
            a.output_tokens,
            a.cost_usd,
        );
    }
    println!(
        "  => generation={} strict={} cost=${:.5} energy={:.4}Wh images={} ({} bytes)",
        record.generation_success,
        record.strict_success,
        record.total_cost_usd,
        record.total_energy_wh,
        record.images_sent_total,
        record.image_bytes_total,
    );
    println!("\nartifacts under {}:", out.display());
    for entry in walk(&out) {
        println!("  {}", entry.strip_prefix(&out).unwrap().display());
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}
