//! Probe and staged verification over the interpreter.
//!
//! The probe runs buggy and gold side by side on a short budget and
//! compresses what it saw; precheck and full verification evaluate a
//! candidate on progressively stricter schedules.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::project::ProjectDocument;
use crate::vm::interp::{execute, splitmix64, ExecutionTrace, RunSchedule, VmState};
use crate::vm::snapshot::{capture_snapshot, StageSnapshot};
use crate::vm::suite::{evaluate, TestSuite};

pub const DEFAULT_PROBE_TICKS: u64 = 60;
pub const DEFAULT_PROBE_RERUNS: usize = 2;
pub const DEFAULT_PRECHECK_TICKS: u64 = 30;
pub const DEFAULT_STRICT_TICKS: u64 = 120;
pub const DEFAULT_STRICT_RERUNS: usize = 2;

/// Probe budget: 60 ticks × 2 reruns, snapshots at the first and last tick
/// (the first divergence tick is added once known).
pub fn default_probe_schedule(seed: u64) -> RunSchedule {
    RunSchedule::new(DEFAULT_PROBE_TICKS, DEFAULT_PROBE_RERUNS, Vec::new(), vec![1, DEFAULT_PROBE_TICKS])
        .materialize_seeds(splitmix64(seed ^ 0x70726F6265)) // "probe"
}

/// Strict budget: 120 ticks × 2 reruns under distinct seeds.
pub fn default_strict_schedule(seed: u64) -> RunSchedule {
    RunSchedule::new(DEFAULT_STRICT_TICKS, DEFAULT_STRICT_RERUNS, Vec::new(), Vec::new())
        .materialize_seeds(splitmix64(seed ^ 0x737472696374)) // "strict"
}

/// The precheck shares the strict schedule's first seed so that any check
/// it can reach is evaluated under the same randomness.
pub fn precheck_schedule(strict: &RunSchedule) -> RunSchedule {
    RunSchedule::new(
        DEFAULT_PRECHECK_TICKS.min(strict.ticks),
        1,
        vec![strict.seeds.first().copied().unwrap_or(0)],
        Vec::new(),
    )
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("gold project fails the suite (checks: {0:?}); the case fixture is invalid")]
    GoldFailsSuite(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStage {
    Precheck,
    Strict,
}

/// Per-check outcomes for one verification stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    /// check id → pass/fail per rerun.
    pub per_check: BTreeMap<String, Vec<bool>>,
    pub overall_pass: bool,
    pub stage: VerdictStage,
}

impl VerdictReport {
    pub fn failing_check_ids(&self) -> Vec<String> {
        self.per_check
            .iter()
            .filter(|(_, passes)| passes.iter().any(|p| !p))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Raw probe measurements.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub buggy_pass_rate: f64,
    pub mismatch_rate: f64,
    pub rerun_instability: f64,
    pub first_divergence_tick: Option<u64>,
    pub snapshots: Vec<StageSnapshot>,
    /// Length of the probe schedule, kept so signal compression can place
    /// the divergence tick relative to the budget.
    pub schedule_ticks: u64,
}

/// Serializable summary (without image payloads) for records and traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub buggy_pass_rate: f64,
    pub mismatch_rate: f64,
    pub rerun_instability: f64,
    pub first_divergence_tick: Option<u64>,
    pub snapshot_count: usize,
    pub schedule_ticks: u64,
}

impl ProbeReport {
    pub fn summary(&self) -> ProbeSummary {
        ProbeSummary {
            buggy_pass_rate: self.buggy_pass_rate,
            mismatch_rate: self.mismatch_rate,
            rerun_instability: self.rerun_instability,
            first_divergence_tick: self.first_divergence_tick,
            snapshot_count: self.snapshots.len(),
            schedule_ticks: self.schedule_ticks,
        }
    }
}

/// Executes buggy and gold under the probe budget and summarizes the
/// observable gap: per-check pass rate on the buggy project, the fraction
/// of differing (tick, observable) samples, the earliest differing tick,
/// and how unstable buggy verdicts are across seeded reruns.
pub fn probe(
    buggy: &ProjectDocument,
    gold: &ProjectDocument,
    suite: &TestSuite,
    budget: &RunSchedule,
) -> Result<ProbeReport, VerifyError> {
    let mut diff_samples = 0usize;
    let mut total_samples = 0usize;
    let mut first_divergence: Option<u64> = None;
    let mut buggy_passes = 0usize;
    let mut verdicts_per_rerun: Vec<Vec<(String, bool)>> = Vec::new();
    let mut first_buggy_trace: Option<ExecutionTrace> = None;

    for rerun in 0..budget.reruns {
        let seed = budget.seeds[rerun];
        let gold_trace = execute(gold, budget, seed);
        let gold_verdicts = evaluate(suite, &gold_trace, budget.ticks);
        let gold_failures: Vec<String> = gold_verdicts
            .iter()
            .filter(|(_, pass)| !pass)
            .map(|(id, _)| id.clone())
            .collect();
        if !gold_failures.is_empty() {
            return Err(VerifyError::GoldFailsSuite(gold_failures));
        }
        let buggy_trace = execute(buggy, budget, seed);
        let verdicts = evaluate(suite, &buggy_trace, budget.ticks);
        buggy_passes += verdicts.iter().filter(|(_, p)| *p).count();
        verdicts_per_rerun.push(verdicts);

        for tick in 1..=budget.ticks {
            let (d, t) = diff_observables(buggy_trace.state_at(tick), gold_trace.state_at(tick));
            diff_samples += d;
            total_samples += t;
            if d > 0 {
                first_divergence = Some(first_divergence.map_or(tick, |f| f.min(tick)));
            }
        }
        if rerun == 0 {
            first_buggy_trace = Some(buggy_trace);
        }
    }

    let checks = suite.checks.len();
    let unstable = (0..checks)
        .filter(|i| {
            let verdicts: BTreeSet<bool> =
                verdicts_per_rerun.iter().map(|v| v[*i].1).collect();
            verdicts.len() > 1
        })
        .count();

    let mut snapshots = Vec::new();
    if let Some(trace) = &first_buggy_trace {
        let mut ticks: Vec<u64> = budget.snapshot_ticks.clone();
        if let Some(div) = first_divergence {
            ticks.push(div);
        }
        ticks.retain(|t| *t <= budget.ticks);
        ticks.sort_unstable();
        ticks.dedup();
        for t in ticks {
            snapshots.push(capture_snapshot(trace.state_at(t)));
        }
    }

    Ok(ProbeReport {
        buggy_pass_rate: if checks == 0 {
            1.0
        } else {
            buggy_passes as f64 / (checks * budget.reruns) as f64
        },
        mismatch_rate: if total_samples == 0 {
            0.0
        } else {
            diff_samples as f64 / total_samples as f64
        },
        rerun_instability: if checks == 0 { 0.0 } else { unstable as f64 / checks as f64 },
        first_divergence_tick: first_divergence,
        snapshots,
        schedule_ticks: budget.ticks,
    })
}

/// Counts differing (observable, value) samples between two states.
/// Observables are each sprite's x, y and costume plus every variable;
/// a name present on one side only counts as a mismatch.
fn diff_observables(a: &VmState, b: &VmState) -> (usize, usize) {
    let mut diff = 0usize;
    let mut total = 0usize;
    let sprite_names: BTreeSet<&String> = a.sprites.keys().chain(b.sprites.keys()).collect();
    for name in sprite_names {
        total += 3;
        match (a.sprites.get(name), b.sprites.get(name)) {
            (Some(sa), Some(sb)) => {
                diff += usize::from(sa.x != sb.x);
                diff += usize::from(sa.y != sb.y);
                diff += usize::from(sa.costume_index != sb.costume_index);
            }
            _ => diff += 3,
        }
    }
    let var_names: BTreeSet<&String> = a.variables.keys().chain(b.variables.keys()).collect();
    for name in var_names {
        total += 1;
        match (a.variables.get(name), b.variables.get(name)) {
            (Some(va), Some(vb)) => diff += usize::from(va != vb),
            _ => diff += 1,
        }
    }
    (diff, total)
}

/// Single-rerun check on the short schedule; weak candidates fail here
/// without paying for the strict run.
pub fn precheck(candidate: &ProjectDocument, suite: &TestSuite, schedule: &RunSchedule) -> VerdictReport {
    run_stage(candidate, suite, schedule, VerdictStage::Precheck)
}

/// Full verification: every check must pass on every seeded rerun.
pub fn full_verify(
    candidate: &ProjectDocument,
    suite: &TestSuite,
    schedule: &RunSchedule,
) -> VerdictReport {
    run_stage(candidate, suite, schedule, VerdictStage::Strict)
}

fn run_stage(
    candidate: &ProjectDocument,
    suite: &TestSuite,
    schedule: &RunSchedule,
    stage: VerdictStage,
) -> VerdictReport {
    let mut per_check: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for rerun in 0..schedule.reruns {
        let trace = execute(candidate, schedule, schedule.seeds[rerun]);
        for (id, pass) in evaluate(suite, &trace, schedule.ticks) {
            per_check.entry(id).or_default().push(pass);
        }
    }
    let overall_pass = per_check.values().all(|passes| passes.iter().all(|p| *p));
    VerdictReport { per_check, overall_pass, stage }
}

/// Earliest tick at which two projects' observables differ under one seed,
/// used for retry feedback after a failed verification.
pub fn first_divergence_tick(
    a: &ProjectDocument,
    b: &ProjectDocument,
    schedule: &RunSchedule,
) -> Option<u64> {
    let seed = schedule.seeds.first().copied().unwrap_or(0);
    let ta = execute(a, schedule, seed);
    let tb = execute(b, schedule, seed);
    (1..=schedule.ticks).find(|t| diff_observables(ta.state_at(*t), tb.state_at(*t)).0 > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(v: serde_json::Value) -> ProjectDocument {
        ProjectDocument::new(v).unwrap()
    }

    fn walker(dx: i64) -> ProjectDocument {
        doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"steps": 0}},
            {"name": "Cat", "x": 0, "y": 0, "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "r", "topLevel": true},
                "r": {"opcode": "control_repeat",
                      "inputs": {"TIMES": 5, "SUBSTACK": {"block": "m"}}, "next": null},
                "m": {"opcode": "motion_changexby", "inputs": {"DX": dx}, "next": "c"},
                "c": {"opcode": "data_changevariableby", "fields": {"VARIABLE": "steps"},
                      "inputs": {"VALUE": 1}}
            }}
        ]}))
    }

    fn walker_suite() -> TestSuite {
        serde_json::from_value(json!({"checks": [
            {"id": "pos", "eval": "final",
             "predicate": {"kind": "sprite_in_box", "sprite": "Cat",
                           "x_min": 49, "x_max": 51, "y_min": -1, "y_max": 1}},
            {"id": "steps", "eval": "final",
             "predicate": {"kind": "variable_equals", "variable": "steps", "value": 5}}
        ]}))
        .unwrap()
    }

    fn budget() -> RunSchedule {
        RunSchedule::new(10, 2, vec![11, 22], vec![])
    }

    #[test]
    fn probe_self_identity() {
        let p = walker(10);
        let report = probe(&p, &p, &walker_suite(), &budget()).unwrap();
        assert_eq!(report.buggy_pass_rate, 1.0);
        assert_eq!(report.mismatch_rate, 0.0);
        assert_eq!(report.rerun_instability, 0.0);
        assert_eq!(report.first_divergence_tick, None);
    }

    #[test]
    fn probe_detects_divergence_tick_and_rates() {
        // buggy walks 8 per tick instead of 10: x differs from tick 1 on,
        // while y, costume, and `steps` agree. 1 sprite (3 observables) +
        // 1 variable = 4 samples/tick; 5 differing ticks of 10 (x stops
        // changing after tick 5... it differs from tick 1 through 10).
        let report = probe(&walker(8), &walker(10), &walker_suite(), &budget()).unwrap();
        assert_eq!(report.first_divergence_tick, Some(1));
        // x differs at every tick (40 vs 50 persists): 10 of 40 samples per rerun
        assert_eq!(report.mismatch_rate, 0.25);
        assert_eq!(report.buggy_pass_rate, 0.5); // pos fails, steps passes
        assert_eq!(report.rerun_instability, 0.0);
    }

    #[test]
    fn probe_rejects_failing_gold() {
        let err = probe(&walker(10), &walker(8), &walker_suite(), &budget());
        assert!(matches!(err, Err(VerifyError::GoldFailsSuite(_))));
    }

    #[test]
    fn strict_requires_every_rerun() {
        // `pick random 1 to 2` drives a variable check: some seeds pass,
        // some fail, so two reruns expose the instability.
        let buggy = doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"roll": 0}},
            {"name": "Cat", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "s", "topLevel": true},
                "s": {"opcode": "data_setvariableto", "fields": {"VARIABLE": "roll"},
                      "inputs": {"VALUE": {"block": "rnd"}}, "next": null},
                "rnd": {"opcode": "operator_random", "inputs": {"FROM": 1, "TO": 2}}
            }}
        ]}));
        let gold = doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"roll": 0}},
            {"name": "Cat", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "s", "topLevel": true},
                "s": {"opcode": "data_setvariableto", "fields": {"VARIABLE": "roll"},
                      "inputs": {"VALUE": 1}, "next": null}
            }}
        ]}));
        let suite: TestSuite = serde_json::from_value(json!({"checks": [
            {"id": "lucky", "eval": "final",
             "predicate": {"kind": "variable_equals", "variable": "roll", "value": 1}}
        ]}))
        .unwrap();
        let (a, b) = unstable_seed_pair(&buggy, &suite).expect("some seed pair must disagree");
        let sched = RunSchedule::new(5, 2, vec![a, b], vec![]);
        let verdict = full_verify(&buggy, &suite, &sched);
        assert!(!verdict.overall_pass, "one rerun fails, so strict fails");
        let report = probe(&buggy, &gold, &suite, &sched).unwrap();
        assert!(report.rerun_instability > 0.0);
    }

    fn unstable_seed_pair(p: &ProjectDocument, suite: &TestSuite) -> Option<(u64, u64)> {
        let verdict_under = |seed: u64| {
            let sched = RunSchedule::new(5, 1, vec![seed], vec![]);
            full_verify(p, suite, &sched).overall_pass
        };
        let first = verdict_under(0);
        (1..256u64).find(|s| verdict_under(*s) != first).map(|s| (0, s))
    }

    #[test]
    fn precheck_skips_checks_beyond_its_schedule() {
        let suite: TestSuite = serde_json::from_value(json!({"checks": [
            {"id": "late", "eval": {"at_tick": 100},
             "predicate": {"kind": "variable_equals", "variable": "missing", "value": 1}}
        ]}))
        .unwrap();
        let p = walker(10);
        let strict = RunSchedule::new(120, 2, vec![1, 2], vec![]);
        let pre = precheck(&p, &suite, &precheck_schedule(&strict));
        assert!(pre.overall_pass, "tick-100 check is unreachable in 30 ticks");
        let full = full_verify(&p, &suite, &strict);
        assert!(!full.overall_pass);
        assert_eq!(full.failing_check_ids(), vec!["late".to_string()]);
    }

    #[test]
    fn probe_snapshots_include_divergence_tick() {
        let mut budget = budget();
        budget.snapshot_ticks = vec![1, 10];
        let report = probe(&walker(8), &walker(10), &walker_suite(), &budget).unwrap();
        let ticks: Vec<u64> = report.snapshots.iter().map(|s| s.tick).collect();
        assert_eq!(ticks, vec![1, 10]); // divergence tick 1 deduplicates
    }
}
