//! Plan selection: compress probe output into a coarse signal, then map
//! (mode, signal, attempt) to a concrete repair plan.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::PatchOpKind;
use crate::vm::interp::RunSchedule;
use crate::vm::verify::ProbeReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    TextOnly,
    AlwaysOn,
    Fixed,
    Heuristic,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 4] = [
        ControllerMode::TextOnly,
        ControllerMode::AlwaysOn,
        ControllerMode::Fixed,
        ControllerMode::Heuristic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::TextOnly => "text_only",
            ControllerMode::AlwaysOn => "always_on",
            ControllerMode::Fixed => "fixed",
            ControllerMode::Heuristic => "heuristic",
        }
    }

    /// Human-facing label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ControllerMode::TextOnly => "Text-only",
            ControllerMode::AlwaysOn => "Always-on multimodal",
            ControllerMode::Fixed => "Fixed multimodal",
            ControllerMode::Heuristic => "Heuristic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "text_only" => Some(ControllerMode::TextOnly),
            "always_on" => Some(ControllerMode::AlwaysOn),
            "fixed" => Some(ControllerMode::Fixed),
            "heuristic" => Some(ControllerMode::Heuristic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Early,
    Mid,
    Late,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchBreadth {
    Local,
    Broad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
}

/// The compressed scheduling signal derived from one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSignal {
    pub divergence: Divergence,
    pub mismatch: MismatchBreadth,
    pub stability: Stability,
    /// 1 − buggy pass rate. Recorded for traces and alternative policies;
    /// it does not gate escalation by default.
    pub pass_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidencePolicy {
    TextOnly,
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    Compact,
    Detailed,
}

/// The per-attempt bundle: evidence policy, patch budget, and verification
/// schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub id: String,
    pub evidence: EvidencePolicy,
    pub max_patch_ops: usize,
    pub precheck_enabled: bool,
    pub strict_schedule: RunSchedule,
    pub max_snapshots: usize,
    pub verbosity: Verbosity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_kinds: Option<BTreeSet<PatchOpKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_path_prefixes: Option<Vec<String>>,
}

impl RepairPlan {
    pub fn check_invariants(&self) -> Result<(), ControllerError> {
        if self.evidence == EvidencePolicy::TextOnly && self.max_snapshots != 0 {
            return Err(ControllerError::InvalidPlan(format!(
                "plan {} is text-only but allows {} snapshots",
                self.id, self.max_snapshots
            )));
        }
        if self.max_patch_ops == 0 {
            return Err(ControllerError::InvalidPlan(format!("plan {} has a zero op cap", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Divergence at or before this tick counts as early.
    pub early_tick_max: u64,
    /// Mismatch rate at or above this is broad.
    pub broad_mismatch_min: f64,
    /// Instability at or above this (and nonzero) is unstable; 0 means any
    /// nonzero instability triggers.
    pub instability_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { early_tick_max: 5, broad_mismatch_min: 0.5, instability_min: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub plan_ladder: Vec<RepairPlan>,
    pub fixed_plan: RepairPlan,
    pub max_attempts: usize,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("attempt {attempt} exceeds max_attempts {max}")]
    AttemptsExhausted { attempt: usize, max: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("mode {0:?} needs at least one matching plan in the ladder")]
    EmptyLadder(ControllerMode),
}

impl ControllerConfig {
    /// The declared default: P0/P1 text plans, P2/P3 multimodal plans with
    /// growing op caps, Fixed pinned to P2, three attempts.
    pub fn default_with_seed(mode: ControllerMode, seed: u64) -> Self {
        let strict = crate::vm::verify::default_strict_schedule(seed);
        let strict_extended =
            RunSchedule::new(180, strict.reruns, strict.seeds.clone(), Vec::new());
        let plan = |id: &str, evidence, cap, snaps, verbosity, schedule: &RunSchedule| RepairPlan {
            id: id.to_string(),
            evidence,
            max_patch_ops: cap,
            precheck_enabled: true,
            strict_schedule: schedule.clone(),
            max_snapshots: snaps,
            verbosity,
            allowed_kinds: None,
            allowed_path_prefixes: None,
        };
        let p0 = plan("P0", EvidencePolicy::TextOnly, 3, 0, Verbosity::Compact, &strict);
        let p1 = plan("P1", EvidencePolicy::TextOnly, 5, 0, Verbosity::Compact, &strict);
        let p2 = plan("P2", EvidencePolicy::Multimodal, 8, 2, Verbosity::Detailed, &strict);
        let p3 =
            plan("P3", EvidencePolicy::Multimodal, 12, 4, Verbosity::Detailed, &strict_extended);
        ControllerConfig {
            mode,
            thresholds: Thresholds::default(),
            plan_ladder: vec![p0, p1, p2.clone(), p3],
            fixed_plan: p2,
            max_attempts: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        for plan in self.plan_ladder.iter().chain([&self.fixed_plan]) {
            plan.check_invariants()?;
        }
        if self.plan_ladder.is_empty() {
            return Err(ControllerError::EmptyLadder(self.mode));
        }
        let has_text =
            self.plan_ladder.iter().any(|p| p.evidence == EvidencePolicy::TextOnly);
        let has_mm =
            self.plan_ladder.iter().any(|p| p.evidence == EvidencePolicy::Multimodal);
        match self.mode {
            ControllerMode::TextOnly if !has_text => Err(ControllerError::EmptyLadder(self.mode)),
            ControllerMode::Heuristic if !(has_text && has_mm) => {
                Err(ControllerError::EmptyLadder(self.mode))
            }
            _ => Ok(()),
        }
    }
}

/// Compresses a probe report into the scheduling signal using the
/// configured thresholds.
pub fn compute_signals(report: &ProbeReport, config: &ControllerConfig) -> ScheduleSignal {
    let t = &config.thresholds;
    let divergence = match report.first_divergence_tick {
        None => Divergence::None,
        Some(tick) if tick <= t.early_tick_max => Divergence::Early,
        Some(tick) if tick <= report.schedule_ticks / 2 => Divergence::Mid,
        Some(_) => Divergence::Late,
    };
    let mismatch = if report.mismatch_rate >= t.broad_mismatch_min {
        MismatchBreadth::Broad
    } else {
        MismatchBreadth::Local
    };
    let stability = if report.rerun_instability > 0.0 && report.rerun_instability >= t.instability_min
    {
        Stability::Unstable
    } else {
        Stability::Stable
    };
    ScheduleSignal { divergence, mismatch, stability, pass_gap: 1.0 - report.buggy_pass_rate }
}

/// True when the heuristic policy escalates to multimodal evidence.
pub fn escalates(signal: &ScheduleSignal) -> bool {
    signal.divergence == Divergence::Early
        || signal.mismatch == MismatchBreadth::Broad
        || signal.stability == Stability::Unstable
}

/// Picks the plan for one attempt. Pure in (config, signal, attempt).
///
/// - text_only: always the smallest text plan.
/// - always_on: the ladder indexed by attempt with evidence forced to
///   multimodal (forced plans get an "+mm" id suffix).
/// - fixed: the one predetermined plan, every attempt.
/// - heuristic: the multimodal track when the signal escalates, otherwise
///   the text track; both tracks only grow with the attempt index.
pub fn decide_plan(
    config: &ControllerConfig,
    signal: &ScheduleSignal,
    attempt: usize,
) -> Result<RepairPlan, ControllerError> {
    if attempt >= config.max_attempts {
        return Err(ControllerError::AttemptsExhausted { attempt, max: config.max_attempts });
    }
    match config.mode {
        ControllerMode::TextOnly => {
            let plan = config
                .plan_ladder
                .iter()
                .filter(|p| p.evidence == EvidencePolicy::TextOnly)
                .min_by_key(|p| p.max_patch_ops)
                .ok_or(ControllerError::EmptyLadder(config.mode))?;
            Ok(plan.clone())
        }
        ControllerMode::AlwaysOn => {
            let idx = attempt.min(config.plan_ladder.len() - 1);
            Ok(force_multimodal(config.plan_ladder[idx].clone(), &config.fixed_plan))
        }
        ControllerMode::Fixed => Ok(config.fixed_plan.clone()),
        ControllerMode::Heuristic => {
            let wanted = if escalates(signal) {
                EvidencePolicy::Multimodal
            } else {
                EvidencePolicy::TextOnly
            };
            let mut track: Vec<&RepairPlan> =
                config.plan_ladder.iter().filter(|p| p.evidence == wanted).collect();
            track.sort_by_key(|p| p.max_patch_ops);
            if track.is_empty() {
                return Err(ControllerError::EmptyLadder(config.mode));
            }
            Ok(track[attempt.min(track.len() - 1)].clone())
        }
    }
}

/// Forces a plan to carry image evidence; the snapshot cap is raised to at
/// least the fixed plan's so "always on" really attaches images.
fn force_multimodal(mut plan: RepairPlan, reference: &RepairPlan) -> RepairPlan {
    if plan.evidence == EvidencePolicy::TextOnly {
        plan.evidence = EvidencePolicy::Multimodal;
        plan.max_snapshots = plan.max_snapshots.max(reference.max_snapshots).max(1);
        plan.id = format!("{}+mm", plan.id);
    }
    plan
}
