//! End-to-end checks of the `blockmend` binary: run, validate, aggregate,
//! audit, deltas, and case against a generated demo workspace.

use std::path::Path;
use std::process::{Command, Output};

use blockmend::fixtures;

fn blockmend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmend"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn demo(root: &Path) -> fixtures::DemoWorkspace {
    fixtures::write_demo_workspace(root).unwrap()
}

#[test]
fn run_validate_aggregate_audit_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let ws = demo(dir.path());
    let out_dir = dir.path().join("out");
    let config = ws.config_path.to_str().unwrap().to_owned();
    let cases = ws.cases_dir.to_str().unwrap().to_owned();
    let out = out_dir.to_str().unwrap().to_owned();

    let run = ok(&blockmend(&[
        "run", "--config", &config, "--fixtures", &cases, "--out", &out, "--parallelism", "4",
    ]));
    assert!(run.contains("80 records"), "run output: {run}");
    assert!(run.contains("completeness: pass"));
    assert!(run.contains("Text-only") && run.contains("Heuristic"));
    assert!(out_dir.join("manifest.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"].as_array().unwrap().len(), 10);
    assert!(manifest["thresholds"]["early_tick_max"].is_number());

    let validate = ok(&blockmend(&[
        "validate", "--config", &config, "--fixtures", &cases, "--out", &out,
    ]));
    assert!(validate.contains("\"pass\": true"));

    let aggregate = ok(&blockmend(&["aggregate", "--out", &out]));
    assert!(aggregate.contains("Always-on multimodal"));
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("summary.csv").exists());
    let csv = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(csv.starts_with("mode,trajectories,"));
    assert_eq!(csv.lines().count(), 5, "header + one row per mode");

    let audit = ok(&blockmend(&["audit", "--out", &out]));
    assert!(audit.contains("Trajectories using images"));
    assert!(audit.contains("strict_verify"));

    let deltas = ok(&blockmend(&[
        "deltas", "--out", &out, "--treatment", "heuristic", "--baseline", "fixed",
    ]));
    assert!(deltas.contains("mock-small") && deltas.contains("mock-large"));
    assert!(deltas.contains("Fixed multimodal"));
}

#[test]
fn mode_and_model_filters_shrink_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let ws = demo(dir.path());
    let out_dir = dir.path().join("out");
    let run = ok(&blockmend(&[
        "run",
        "--config",
        ws.config_path.to_str().unwrap(),
        "--fixtures",
        ws.cases_dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "text_only",
        "--model",
        "mock-small",
    ]));
    assert!(run.contains("10 records"), "filters should leave 1x1x10: {run}");
}

#[test]
fn single_case_prints_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let ws = demo(dir.path());
    let out = ok(&blockmend(&[
        "case",
        "--config",
        ws.config_path.to_str().unwrap(),
        "--fixtures",
        ws.cases_dir.join("walk-distance").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--model",
        "mock-small",
        "--mode",
        "heuristic",
    ]));
    let record: serde_json::Value = serde_json::from_str(&out).expect("record json on stdout");
    assert_eq!(record["case_id"], "walk-distance");
    assert_eq!(record["mode"], "heuristic");
    assert_eq!(record["strict_success"], true);
}

#[test]
fn pricing_table_overrides_endpoint_pricing() {
    let dir = tempfile::tempdir().unwrap();
    let ws = demo(dir.path());
    // free pricing zeroes every trajectory cost
    let zero_pricing = dir.path().join("zero.json");
    std::fs::write(
        &zero_pricing,
        serde_json::json!({
            "mock-small": {"usd_per_1M_input_tokens": 0.0, "usd_per_1M_output_tokens": 0.0},
        })
        .to_string(),
    )
    .unwrap();
    let out = ok(&blockmend(&[
        "case",
        "--config",
        ws.config_path.to_str().unwrap(),
        "--pricing",
        zero_pricing.to_str().unwrap(),
        "--fixtures",
        ws.cases_dir.join("late-drift").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--model",
        "mock-small",
        "--mode",
        "text_only",
    ]));
    let record: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(record["total_cost_usd"], 0.0);
}

#[test]
fn invalid_fixture_fails_fast_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let ws = demo(dir.path());
    // corrupt one case: gold that no longer passes its suite
    let broken = ws.cases_dir.join("walk-distance");
    std::fs::copy(broken.join("buggy.sb3"), broken.join("gold.sb3")).unwrap();
    let out = blockmend(&[
        "run",
        "--config",
        ws.config_path.to_str().unwrap(),
        "--fixtures",
        ws.cases_dir.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("walk-distance"), "error must name the case: {stderr}");
    // fail-fast: nothing was executed
    assert!(!dir.path().join("out").join("mock-small").exists());
}
