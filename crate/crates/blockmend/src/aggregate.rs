//! Summary computation over completed trajectory records: per-mode
//! summaries, the image/strict audit, failure-layer counts, and per-model
//! deltas. Display values round half away from zero at the documented
//! precision; machine output keeps full precision.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::controller::ControllerMode;
use crate::trajectory::{FailureLayer, TrajectoryRecord};

/// Half-away-from-zero rounding at `decimals` places, applied to display
/// values only.
pub fn round_display(x: f64, decimals: u32) -> f64 {
    let m = 10f64.powi(decimals as i32);
    (x * m).round() / m
}

pub fn pct(numer: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        100.0 * numer as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: ControllerMode,
    pub trajectories: usize,
    pub gen_count: usize,
    pub strict_count: usize,
    pub gen_pct: f64,
    pub strict_pct: f64,
    pub mean_cost_usd: f64,
    pub mean_images: f64,
    pub mean_attempts: f64,
    pub mean_energy_wh: f64,
}

fn by_mode(records: &[TrajectoryRecord]) -> BTreeMap<ControllerMode, Vec<&TrajectoryRecord>> {
    let mut map: BTreeMap<ControllerMode, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.mode).or_default().push(r);
    }
    map
}

fn summarize(mode: ControllerMode, records: &[&TrajectoryRecord]) -> ModeSummary {
    let n = records.len();
    let gen_count = records.iter().filter(|r| r.generation_success).count();
    let strict_count = records.iter().filter(|r| r.strict_success).count();
    let mean = |f: &dyn Fn(&TrajectoryRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    ModeSummary {
        mode,
        trajectories: n,
        gen_count,
        strict_count,
        gen_pct: pct(gen_count, n),
        strict_pct: pct(strict_count, n),
        mean_cost_usd: mean(&|r| r.total_cost_usd),
        mean_images: mean(&|r| r.images_sent_total as f64),
        mean_attempts: mean(&|r| r.attempts.len() as f64),
        mean_energy_wh: mean(&|r| r.total_energy_wh),
    }
}

/// Per-mode success and resource means. Order and shuffling of the input
/// never change the output.
pub fn aggregate_modes(records: &[TrajectoryRecord]) -> Vec<ModeSummary> {
    by_mode(records).into_iter().map(|(mode, rs)| summarize(mode, &rs)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageAuditRow {
    pub mode: ControllerMode,
    pub gen_count: usize,
    pub strict_count: usize,
    /// Absent when the mode produced no generation successes.
    pub strict_over_gen_pct: Option<f64>,
    pub image_using_traj_pct: f64,
}

/// Image-use and strict-conversion audit per mode. The strict ratio is
/// computed over generation-success trajectories only.
pub fn image_audit(records: &[TrajectoryRecord]) -> Vec<ImageAuditRow> {
    by_mode(records)
        .into_iter()
        .map(|(mode, rs)| {
            let gen_count = rs.iter().filter(|r| r.generation_success).count();
            let strict_count = rs.iter().filter(|r| r.strict_success).count();
            let with_images = rs.iter().filter(|r| r.images_sent_total > 0).count();
            ImageAuditRow {
                mode,
                gen_count,
                strict_count,
                strict_over_gen_pct: (gen_count > 0).then(|| pct(strict_count, gen_count)),
                image_using_traj_pct: pct(with_images, rs.len()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureLayerRow {
    pub mode: ControllerMode,
    /// Failed attempts per layer.
    pub attempts_by_layer: BTreeMap<FailureLayer, usize>,
    /// extraction + schema, the merged "parse" view.
    pub parse_failures: usize,
    pub application_failures: usize,
    /// Trajectories whose final attempt stopped at precheck or strict
    /// verification, i.e. failures observed after a candidate was applied.
    pub verifier_stage_trajectories: usize,
    pub failed_attempts_total: usize,
}

/// Counts failed attempts per layer and the trajectory-level verifier-stage
/// view. Attempt layer counts partition the failed attempts exactly.
pub fn failure_layers(records: &[TrajectoryRecord]) -> Vec<FailureLayerRow> {
    by_mode(records)
        .into_iter()
        .map(|(mode, rs)| {
            let mut attempts_by_layer: BTreeMap<FailureLayer, usize> =
                FailureLayer::ALL.into_iter().map(|l| (l, 0)).collect();
            let mut failed_attempts_total = 0usize;
            let mut verifier_stage_trajectories = 0usize;
            for r in &rs {
                for a in &r.attempts {
                    if let Some(layer) = a.outcome.failure_layer() {
                        *attempts_by_layer.entry(layer).or_default() += 1;
                        failed_attempts_total += 1;
                    }
                }
                let final_layer = r.attempts.last().and_then(|a| a.outcome.failure_layer());
                if matches!(final_layer, Some(FailureLayer::Precheck | FailureLayer::StrictVerify))
                {
                    verifier_stage_trajectories += 1;
                }
            }
            let parse_failures = attempts_by_layer[&FailureLayer::Extraction]
                + attempts_by_layer[&FailureLayer::Schema];
            let application_failures = attempts_by_layer[&FailureLayer::Application];
            FailureLayerRow {
                mode,
                attempts_by_layer,
                parse_failures,
                application_failures,
                verifier_stage_trajectories,
                failed_attempts_total,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaReport {
    pub model_id: String,
    pub baseline_mode: ControllerMode,
    pub treatment_mode: ControllerMode,
    pub gen_gain_pp: f64,
    /// (baseline − treatment) / baseline · 100; absent when the baseline
    /// mean is zero.
    pub cost_reduction_pct: Option<f64>,
    pub energy_reduction_pct: Option<f64>,
}

#[derive(Debug, Error)]
#[error("model {model_id} is missing records for mode {mode:?}")]
pub struct MissingCell {
    pub model_id: String,
    pub mode: ControllerMode,
}

fn reduction(baseline: f64, treatment: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - treatment) / baseline * 100.0)
}

/// Per-model deltas of a treatment mode against a baseline mode.
pub fn pairwise_deltas(
    records: &[TrajectoryRecord],
    treatment: ControllerMode,
    baseline: ControllerMode,
) -> Result<Vec<DeltaReport>, MissingCell> {
    let mut by_model: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(&r.model_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (model_id, rs) in by_model {
        let pick = |mode: ControllerMode| -> Result<ModeSummary, MissingCell> {
            let subset: Vec<&TrajectoryRecord> =
                rs.iter().copied().filter(|r| r.mode == mode).collect();
            if subset.is_empty() {
                return Err(MissingCell { model_id: model_id.to_string(), mode });
            }
            Ok(summarize(mode, &subset))
        };
        let t = pick(treatment)?;
        let b = pick(baseline)?;
        out.push(DeltaReport {
            model_id: model_id.to_string(),
            baseline_mode: baseline,
            treatment_mode: treatment,
            gen_gain_pp: t.gen_pct - b.gen_pct,
            cost_reduction_pct: reduction(b.mean_cost_usd, t.mean_cost_usd),
            energy_reduction_pct: reduction(b.mean_energy_wh, t.mean_energy_wh),
        });
    }
    Ok(out)
}

const MODE_ORDER: [ControllerMode; 4] = [
    ControllerMode::TextOnly,
    ControllerMode::AlwaysOn,
    ControllerMode::Fixed,
    ControllerMode::Heuristic,
];

fn ordered<'a, T>(rows: &'a [T], mode_of: impl Fn(&T) -> ControllerMode) -> Vec<&'a T> {
    let mut out: Vec<&T> = Vec::new();
    for mode in MODE_ORDER {
        out.extend(rows.iter().filter(|r| mode_of(r) == mode));
    }
    for r in rows {
        if !MODE_ORDER.contains(&mode_of(r)) {
            out.push(r);
        }
    }
    out
}

/// Aligned-text mode summary (percentages at 1 decimal, cost at 5,
/// images/attempts at 2, energy at 2).
pub fn render_mode_table(summaries: &[ModeSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>6} {:>7} {:>9} {:>12} {:>9} {:>12}\n",
        "Mode", "Gen.", "Strict", "Cost ($)", "Avg. images", "Attempts", "Energy (Wh)"
    ));
    for s in ordered(summaries, |s| s.mode) {
        out.push_str(&format!(
            "{:<22} {:>6.1} {:>7.1} {:>9.5} {:>12.2} {:>9.2} {:>12.2}\n",
            s.mode.label(),
            round_display(s.gen_pct, 1),
            round_display(s.strict_pct, 1),
            round_display(s.mean_cost_usd, 5),
            round_display(s.mean_images, 2),
            round_display(s.mean_attempts, 2),
            round_display(s.mean_energy_wh, 2),
        ));
    }
    out
}

pub fn render_audit_table(rows: &[ImageAuditRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>10} {:>12} {:>16} {:>26}\n",
        "Mode", "Gen. count", "Strict count", "Strict/gen. (%)", "Trajectories using images (%)"
    ));
    for r in ordered(rows, |r| r.mode) {
        let ratio = match r.strict_over_gen_pct {
            Some(p) => format!("{:.1}", round_display(p, 1)),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<22} {:>10} {:>12} {:>16} {:>26.1}\n",
            r.mode.label(),
            r.gen_count,
            r.strict_count,
            ratio,
            round_display(r.image_using_traj_pct, 1),
        ));
    }
    out
}

pub fn render_delta_table(deltas: &[DeltaReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:<22} {:>14} {:>14} {:>16}\n",
        "Model", "Baseline", "Gen. gain (pp)", "Cost red. (%)", "Energy red. (%)"
    ));
    for d in deltas {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{:.1}", round_display(x, 1)),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<18} {:<22} {:>+14.1} {:>14} {:>16}\n",
            d.model_id,
            d.baseline_mode.label(),
            round_display(d.gen_gain_pp, 1),
            fmt_opt(d.cost_reduction_pct),
            fmt_opt(d.energy_reduction_pct),
        ));
    }
    out
}

pub fn render_failure_table(rows: &[FailureLayerRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>8} {:>11} {:>7} {:>12} {:>9} {:>13} {:>7} {:>13}\n",
        "Mode", "request", "extraction", "schema", "application", "precheck", "strict_verify",
        "parse", "verifier-traj"
    ));
    for r in ordered(rows, |r| r.mode) {
        out.push_str(&format!(
            "{:<22} {:>8} {:>11} {:>7} {:>12} {:>9} {:>13} {:>7} {:>13}\n",
            r.mode.label(),
            r.attempts_by_layer[&FailureLayer::Request],
            r.attempts_by_layer[&FailureLayer::Extraction],
            r.attempts_by_layer[&FailureLayer::Schema],
            r.attempts_by_layer[&FailureLayer::Application],
            r.attempts_by_layer[&FailureLayer::Precheck],
            r.attempts_by_layer[&FailureLayer::StrictVerify],
            r.parse_failures,
            r.verifier_stage_trajectories,
        ));
    }
    out
}

/// Machine summary: exact values, no display rounding.
pub fn summary_json(records: &[TrajectoryRecord]) -> serde_json::Value {
    serde_json::json!({
        "modes": aggregate_modes(records),
        "image_audit": image_audit(records),
        "failure_layers": failure_layers(records),
        "trajectories": records.len(),
    })
}

pub fn summary_csv(summaries: &[ModeSummary]) -> String {
    let mut out =
        String::from("mode,trajectories,gen_count,strict_count,gen_pct,strict_pct,mean_cost_usd,mean_images,mean_attempts,mean_energy_wh\n");
    for s in ordered(summaries, |s| s.mode) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.mode.as_str(),
            s.trajectories,
            s.gen_count,
            s.strict_count,
            s.gen_pct,
            s.strict_pct,
            s.mean_cost_usd,
            s.mean_images,
            s.mean_attempts,
            s.mean_energy_wh
        ));
    }
    out
}
