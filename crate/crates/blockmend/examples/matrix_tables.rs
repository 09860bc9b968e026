//! Run the full demo matrix (2 endpoints x 4 modes x 10 cases) and render
//! the mode-summary, image-audit, failure-layer, and per-model delta
//! tables from the completed records.

use blockmend::aggregate::{
    aggregate_modes, failure_layers, image_audit, pairwise_deltas, render_audit_table,
    render_delta_table, render_failure_table, render_mode_table,
};
use blockmend::controller::ControllerMode;
use blockmend::fixtures;
use blockmend::matrix::{run_matrix, validate_matrix};

fn main() {
    let root = std::env::temp_dir().join("blockmend-matrix-demo");
    let _ = std::fs::remove_dir_all(&root);
    let ws = fixtures::write_demo_workspace(&root).expect("demo workspace");
    let spec = fixtures::demo_matrix_spec(&ws, &root.join("out"), 0xB10C);

    let run = run_matrix(&spec).expect("matrix runs");
    let report = validate_matrix(&run.records, &spec);
    println!(
        "{} trajectories ({} executed, {} resumed), completeness: {}\n",
        run.records.len(),
        run.executed,
        run.skipped,
        if report.pass { "pass" } else { "FAIL" }
    );

    println!("== Mode summary ==");
    print!("{}", render_mode_table(&aggregate_modes(&run.records)));

    println!("\n== Image-use and strict-verification audit ==");
    print!("{}", render_audit_table(&image_audit(&run.records)));

    println!("\n== Failure layers (attempt-level, plus trajectory verifier view) ==");
    print!("{}", render_failure_table(&failure_layers(&run.records)));

    for baseline in [ControllerMode::AlwaysOn, ControllerMode::Fixed] {
        println!("\n== Heuristic vs {} ==", baseline.label());
        let deltas = pairwise_deltas(&run.records, ControllerMode::Heuristic, baseline)
            .expect("both modes present");
        print!("{}", render_delta_table(&deltas));
    }
    println!("\nrecords and manifest under {}", spec.output_dir.display());
}
