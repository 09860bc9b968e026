//! One case's full repair trajectory: probe once, then loop plan
//! selection, generation, patch application, and staged verification until
//! a strict pass or the attempt budget runs out. Every failed attempt is
//! classified into exactly one pipeline layer.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::accounting::{
    CostLedger, EnergyConfig, EnergyMeter, EnergyReport, Pricing, TraceError, TraceEventKind,
    TraceWriter, Usage,
};
use crate::controller::{compute_signals, decide_plan, ControllerConfig, ControllerMode, ScheduleSignal};
use crate::gateway::{
    assemble_request, build_prompt, call_model, CallContext, CaseBrief, GatewayError,
    ModelEndpoint, PayloadAudit,
};
use crate::patch::{self, PatchError, PatchOpKind, PatchSchema};
use crate::project::{self, ProjectError, Sb3Archive};
use crate::vm::interp::splitmix64;
use crate::vm::suite::TestSuite;
use crate::vm::verify::{
    self, default_probe_schedule, default_strict_schedule, precheck_schedule, ProbeSummary,
    VerdictReport, DEFAULT_STRICT_TICKS,
};

/// Seed used only for the gold-soundness assertion at case load; run-time
/// verification uses schedules derived from the run seed.
const GOLD_CHECK_SEED: u64 = 0xB10C_0DE5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub localization_hints: Vec<String>,
}

/// A loaded repair case: buggy and gold archives, the executable suite,
/// and optional metadata.
#[derive(Debug, Clone)]
pub struct RepairCase {
    pub case_id: String,
    pub buggy: Sb3Archive,
    pub gold: Sb3Archive,
    pub suite: TestSuite,
    pub metadata: CaseMeta,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case {case}: {source}")]
    Io {
        case: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case {case}: {message}")]
    Invalid { case: String, message: String },
}

impl RepairCase {
    /// Loads `buggy.sb3`, `gold.sb3`, `suite.json`, and optional
    /// `meta.json` from a fixture directory. The gold project must pass
    /// strict verification, otherwise the fixture is rejected here.
    pub fn load(dir: &Path) -> Result<Self, CaseError> {
        let case_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".to_string());
        let io = |source| CaseError::Io { case: case_id.clone(), source };
        let invalid = |message: String| CaseError::Invalid { case: case_id.clone(), message };

        let buggy = project::load_archive(&std::fs::read(dir.join("buggy.sb3")).map_err(io)?)
            .map_err(|e| invalid(format!("buggy.sb3: {e}")))?;
        let gold = project::load_archive(&std::fs::read(dir.join("gold.sb3")).map_err(io)?)
            .map_err(|e| invalid(format!("gold.sb3: {e}")))?;
        let suite = TestSuite::from_json(&std::fs::read(dir.join("suite.json")).map_err(io)?)
            .map_err(|e| invalid(format!("suite.json: {e}")))?;
        suite
            .validate_against(DEFAULT_STRICT_TICKS)
            .map_err(|e| invalid(format!("suite.json: {e}")))?;
        let metadata = match std::fs::read(dir.join("meta.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| invalid(format!("meta.json: {e}")))?,
            Err(_) => CaseMeta::default(),
        };

        let strict = default_strict_schedule(GOLD_CHECK_SEED);
        let verdict = verify::full_verify(gold.project(), &suite, &strict);
        if !verdict.overall_pass {
            return Err(invalid(format!(
                "gold fails its own suite on checks {:?}",
                verdict.failing_check_ids()
            )));
        }
        Ok(RepairCase { case_id, buggy, gold, suite, metadata })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLayer {
    Request,
    Extraction,
    Schema,
    Application,
    Precheck,
    StrictVerify,
}

impl FailureLayer {
    pub const ALL: [FailureLayer; 6] = [
        FailureLayer::Request,
        FailureLayer::Extraction,
        FailureLayer::Schema,
        FailureLayer::Application,
        FailureLayer::Precheck,
        FailureLayer::StrictVerify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureLayer::Request => "request",
            FailureLayer::Extraction => "extraction",
            FailureLayer::Schema => "schema",
            FailureLayer::Application => "application",
            FailureLayer::Precheck => "precheck",
            FailureLayer::StrictVerify => "strict_verify",
        }
    }
}

impl fmt::Display for FailureLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured description of why an attempt stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum FailureInfo {
    Request { message: String },
    Extraction,
    Schema { violation: SchemaViolation },
    Application {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op_index: Option<usize>,
        cause: String,
    },
    Precheck { failing_checks: Vec<String> },
    StrictVerify {
        failing_checks: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        candidate_divergence_tick: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    Budget { cap: usize, got: usize },
    ForbiddenKind { index: usize, op: PatchOpKind },
    ForbiddenPath { index: usize, path: String },
}

/// Maps a stage failure to its accounting layer.
pub fn classify_failure(failure: &FailureInfo) -> FailureLayer {
    match failure {
        FailureInfo::Request { .. } => FailureLayer::Request,
        FailureInfo::Extraction => FailureLayer::Extraction,
        FailureInfo::Schema { .. } => FailureLayer::Schema,
        FailureInfo::Application { .. } => FailureLayer::Application,
        FailureInfo::Precheck { .. } => FailureLayer::Precheck,
        FailureInfo::StrictVerify { .. } => FailureLayer::StrictVerify,
    }
}

fn failure_from_patch_error(e: &PatchError) -> FailureInfo {
    match e {
        PatchError::ExtractionFailure => FailureInfo::Extraction,
        PatchError::BudgetExceeded { cap, got } => {
            FailureInfo::Schema { violation: SchemaViolation::Budget { cap: *cap, got: *got } }
        }
        PatchError::ForbiddenKind { index, kind } => FailureInfo::Schema {
            violation: SchemaViolation::ForbiddenKind { index: *index, op: *kind },
        },
        PatchError::ForbiddenPath { index, path } => FailureInfo::Schema {
            violation: SchemaViolation::ForbiddenPath { index: *index, path: path.clone() },
        },
        PatchError::ApplicationFailure { index, kind, cause } => FailureInfo::Application {
            op_index: Some(*index),
            cause: format!("{kind}: {cause}"),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Success,
    Failure(FailureLayer),
}

impl AttemptOutcome {
    pub fn failure_layer(self) -> Option<FailureLayer> {
        match self {
            AttemptOutcome::Success => None,
            AttemptOutcome::Failure(layer) => Some(layer),
        }
    }
}

impl Serialize for AttemptOutcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AttemptOutcome::Success => s.serialize_str("success"),
            AttemptOutcome::Failure(layer) => s.serialize_str(layer.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for AttemptOutcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "success" {
            return Ok(AttemptOutcome::Success);
        }
        FailureLayer::ALL
            .into_iter()
            .find(|l| l.as_str() == raw)
            .map(AttemptOutcome::Failure)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown outcome {raw:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precheck: Option<VerdictReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<VerdictReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt_index: usize,
    pub plan_id: String,
    pub payload_audit: PayloadAudit,
    pub outcome: AttemptOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_op_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<VerdictPair>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
    pub duration_ms: u64,
}

/// The unit of aggregation: one case's complete history under one endpoint
/// and mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub case_id: String,
    pub model_id: String,
    pub mode: ControllerMode,
    pub attempts: Vec<AttemptRecord>,
    pub generation_success: bool,
    pub strict_success: bool,
    pub total_cost_usd: f64,
    pub total_energy_wh: f64,
    pub images_sent_total: u64,
    pub image_bytes_total: u64,
    pub probe: ProbeSummary,
    pub signal: ScheduleSignal,
    pub energy: EnergyReport,
    pub duration_ms: u64,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("case {case}: gold fails the suite under the probe budget: {checks:?}")]
    GoldFailsSuite { case: String, checks: Vec<String> },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("controller: {0}")]
    Controller(#[from] crate::controller::ControllerError),
}

/// Deterministic, human-readable retry feedback derived from the prior
/// attempt's failure.
pub fn build_retry_context(prior: &AttemptRecord) -> Option<String> {
    let failure = prior.failure.as_ref()?;
    Some(match failure {
        FailureInfo::Request { message } => format!(
            "the previous request never reached the model ({message}); answer with a bare JSON array of operations"
        ),
        FailureInfo::Extraction => "no JSON patch could be extracted from the previous response; \
            respond with a bare JSON array of RFC 6902 operations and no prose"
            .to_string(),
        FailureInfo::Schema { violation } => match violation {
            SchemaViolation::Budget { cap, got } => format!(
                "the previous patch violated the schema: operation budget {cap}, received {got}; \
                 reply with at most {cap} operations"
            ),
            SchemaViolation::ForbiddenKind { index, op } => format!(
                "the previous patch violated the schema: op {index} uses forbidden kind {op}"
            ),
            SchemaViolation::ForbiddenPath { index, path } => format!(
                "the previous patch violated the schema: op {index} touches {path}, outside the allowed paths"
            ),
        },
        FailureInfo::Application { op_index, cause } => match op_index {
            Some(i) => format!(
                "the previous patch failed to apply at op {i} ({cause}); verify every path exists in project.json"
            ),
            None => format!("the previous patch produced an invalid project ({cause})"),
        },
        FailureInfo::Precheck { failing_checks } => format!(
            "the candidate failed the precheck on checks: {}",
            failing_checks.join(", ")
        ),
        FailureInfo::StrictVerify { failing_checks, candidate_divergence_tick } => {
            let mut msg = format!(
                "the candidate failed strict verification on checks: {}",
                failing_checks.join(", ")
            );
            if let Some(t) = candidate_divergence_tick {
                msg.push_str(&format!("; it first diverges from the reference at tick {t}"));
            }
            msg
        }
    })
}

pub struct TrajectoryPaths {
    pub dir: PathBuf,
}

impl TrajectoryPaths {
    pub fn new(dir: PathBuf) -> Self {
        TrajectoryPaths { dir }
    }

    pub fn trace(&self) -> PathBuf {
        self.dir.join("trace.jsonl")
    }

    pub fn record(&self) -> PathBuf {
        self.dir.join("record.json")
    }

    pub fn candidate(&self, attempt: usize) -> PathBuf {
        self.dir.join("candidates").join(format!("attempt-{attempt}.sb3"))
    }

    pub fn snapshot(&self, tick: u64) -> PathBuf {
        self.dir.join("snapshots").join(format!("tick-{tick:04}.ppm"))
    }
}

/// Runs the whole loop for one case. All repair failures become classified
/// attempt outcomes; only fixture invalidity and trace i/o abort.
pub fn run_trajectory(
    case: &RepairCase,
    endpoint: &ModelEndpoint,
    config: &ControllerConfig,
    run_seed: u64,
    out_dir: &Path,
) -> Result<TrajectoryRecord, RunnerError> {
    let started = Instant::now();
    let paths = TrajectoryPaths::new(out_dir.to_path_buf());
    std::fs::create_dir_all(&paths.dir)?;
    let mut trace = TraceWriter::create(&paths.trace())?;
    let mut energy = EnergyMeter::new(EnergyConfig::default_stub());
    run_trajectory_inner(case, endpoint, config, run_seed, &paths, &mut trace, &mut energy, started)
}

/// Same as [`run_trajectory`] with a caller-supplied energy meter (e.g.
/// sampled mode).
#[allow(clippy::too_many_arguments)]
fn run_trajectory_inner(
    case: &RepairCase,
    endpoint: &ModelEndpoint,
    config: &ControllerConfig,
    run_seed: u64,
    paths: &TrajectoryPaths,
    trace: &mut TraceWriter,
    energy: &mut EnergyMeter,
    started: Instant,
) -> Result<TrajectoryRecord, RunnerError> {
    energy.start().expect("fresh meter per trajectory");
    let case_seed = splitmix64(run_seed ^ fnv1a64(&case.case_id));
    let mut ledger = CostLedger::new();

    // Algorithm: probe once, then spend the attempt budget.
    let probe_schedule = default_probe_schedule(case_seed);
    let probe = verify::probe(case.buggy.project(), case.gold.project(), &case.suite, &probe_schedule)
        .map_err(|e| match e {
            verify::VerifyError::GoldFailsSuite(checks) => {
                RunnerError::GoldFailsSuite { case: case.case_id.clone(), checks }
            }
        })?;
    for snap in &probe.snapshots {
        let path = paths.snapshot(snap.tick);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &snap.encoded)?;
    }
    trace.write(
        TraceEventKind::Probe,
        json!({
            "case_id": case.case_id,
            "summary": probe.summary(),
            "schedule": probe_schedule,
        }),
    )?;
    let signal = compute_signals(&probe, config);

    let brief = CaseBrief {
        case_id: case.case_id.clone(),
        description: case.metadata.description.clone(),
        localization_hints: case.metadata.localization_hints.clone(),
        project_json: String::from_utf8_lossy(&project::canonical_serialize(case.buggy.project()))
            .into_owned(),
        asset_images: case
            .buggy
            .assets()
            .filter_map(|(name, bytes)| crate::gateway::attachment_from_asset(name, bytes))
            .collect(),
    };

    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut retry_feedback: Option<String> = None;
    let mut generation_success = false;
    let mut strict_success = false;

    for attempt in 0..config.max_attempts {
        let attempt_started = Instant::now();
        let plan = decide_plan(config, &signal, attempt)?;
        let strict_schedule =
            plan.strict_schedule.clone().materialize_seeds(splitmix64(case_seed ^ 0x5EED));
        trace.write(
            TraceEventKind::AttemptStart,
            json!({"attempt": attempt, "plan": plan.id, "evidence": plan.evidence}),
        )?;

        let bundle =
            build_prompt(&brief, &signal, &plan, retry_feedback.as_deref(), &probe.snapshots);
        let payload = assemble_request(&bundle, endpoint.request_style);
        let ctx = CallContext {
            case_id: case.case_id.clone(),
            attempt,
            plan_id: plan.id.clone(),
        };
        trace.write(
            TraceEventKind::Request,
            json!({
                "attempt": attempt,
                "style": endpoint.request_style,
                "model": endpoint.model_id,
                "texts": payload.texts,
                "images": payload.images.len(),
                "image_bytes": payload.images.iter().map(|i| i.bytes.len()).sum::<usize>(),
            }),
        )?;
        let (result, audit) = call_model(endpoint, &payload, &ctx);

        let mut record = AttemptRecord {
            attempt_index: attempt,
            plan_id: plan.id.clone(),
            payload_audit: audit,
            outcome: AttemptOutcome::Success,
            failure: None,
            patch_op_count: None,
            verdicts: None,
            input_tokens: 0,
            output_tokens: 0,
            cost_usd: 0.0,
            duration_ms: 0,
        };

        let outcome = run_attempt_stages(
            case,
            &plan,
            &strict_schedule,
            result,
            attempt,
            paths,
            trace,
            &mut record,
            &mut ledger,
            &endpoint.pricing,
        )?;

        match outcome {
            StageOutcome::StrictPass => {
                generation_success = true;
                strict_success = true;
            }
            StageOutcome::Failed { applied } => generation_success |= applied,
        }
        record.duration_ms = attempt_started.elapsed().as_millis() as u64;
        trace.write(
            TraceEventKind::AttemptEnd,
            json!({
                "attempt": attempt,
                "outcome": record.outcome,
                "cost_usd": record.cost_usd,
                "duration_ms": record.duration_ms,
            }),
        )?;
        retry_feedback = build_retry_context(&record);
        attempts.push(record);
        if strict_success {
            break;
        }
    }

    let energy_report = energy.stop().expect("bracket opened above");
    let record = TrajectoryRecord {
        case_id: case.case_id.clone(),
        model_id: endpoint.model_id.clone(),
        mode: config.mode,
        generation_success,
        strict_success,
        total_cost_usd: ledger.total_usd(),
        total_energy_wh: energy_report.total_wh,
        images_sent_total: attempts.iter().map(|a| a.payload_audit.images_sent).sum(),
        image_bytes_total: attempts.iter().map(|a| a.payload_audit.image_bytes_sent).sum(),
        probe: probe.summary(),
        signal,
        energy: energy_report,
        duration_ms: started.elapsed().as_millis() as u64,
        attempts,
    };
    trace.write(
        TraceEventKind::Summary,
        json!({
            "case_id": record.case_id,
            "generation_success": record.generation_success,
            "strict_success": record.strict_success,
            "attempts": record.attempts.len(),
            "total_cost_usd": record.total_cost_usd,
            "images_sent_total": record.images_sent_total,
            "image_bytes_total": record.image_bytes_total,
        }),
    )?;
    std::fs::write(paths.record(), serde_json::to_vec_pretty(&record).expect("serializable"))?;
    Ok(record)
}

enum StageOutcome {
    StrictPass,
    Failed { applied: bool },
}

/// Drives one attempt from model response to verdict, filling the record
/// and writing stage events. Returns whether a candidate was applied.
#[allow(clippy::too_many_arguments)]
fn run_attempt_stages(
    case: &RepairCase,
    plan: &crate::controller::RepairPlan,
    strict_schedule: &crate::vm::interp::RunSchedule,
    result: Result<crate::gateway::ModelResponse, GatewayError>,
    attempt: usize,
    paths: &TrajectoryPaths,
    trace: &mut TraceWriter,
    record: &mut AttemptRecord,
    ledger: &mut CostLedger,
    pricing: &Pricing,
) -> Result<StageOutcome, RunnerError> {
    let fail = |record: &mut AttemptRecord,
                    ledger: &mut CostLedger,
                    failure: FailureInfo,
                    applied: bool| {
        record.outcome = AttemptOutcome::Failure(classify_failure(&failure));
        record.failure = Some(failure);
        let usage = Usage {
            input_tokens: record.input_tokens,
            output_tokens: record.output_tokens,
            images: record.payload_audit.images_sent,
        };
        record.cost_usd = ledger.add(attempt, &usage, pricing).as_usd();
        StageOutcome::Failed { applied }
    };

    let response = match result {
        Ok(r) => r,
        Err(GatewayError::RequestFailure(message)) => {
            trace.write(
                TraceEventKind::Response,
                json!({"attempt": attempt, "error": message}),
            )?;
            // nothing reached the provider, so nothing is billed; the
            // audit still records the assembled payload
            record.outcome = AttemptOutcome::Failure(FailureLayer::Request);
            record.failure = Some(FailureInfo::Request { message });
            record.cost_usd = ledger.add(attempt, &Usage::default(), pricing).as_usd();
            return Ok(StageOutcome::Failed { applied: false });
        }
    };
    record.input_tokens = response.input_tokens;
    record.output_tokens = response.output_tokens;
    trace.write(
        TraceEventKind::Response,
        json!({
            "attempt": attempt,
            "raw_text": response.raw_text,
            "input_tokens": response.input_tokens,
            "output_tokens": response.output_tokens,
            "latency_ms": response.latency_ms,
            "token_source": response.token_source,
        }),
    )?;

    let schema = PatchSchema {
        max_ops: plan.max_patch_ops,
        allowed_kinds: plan
            .allowed_kinds
            .clone()
            .unwrap_or_else(|| PatchOpKind::ALL.into_iter().collect()),
        allowed_path_prefixes: plan.allowed_path_prefixes.clone(),
    };
    let patch = match patch::extract_patch(&response.raw_text)
        .and_then(|p| patch::validate(p, &schema))
        .map(patch::normalize)
    {
        Ok(p) => p,
        Err(e) => {
            let failure = failure_from_patch_error(&e);
            trace.write(
                TraceEventKind::Parse,
                json!({"attempt": attempt, "error": e.to_string(), "layer": classify_failure(&failure)}),
            )?;
            return Ok(fail(record, ledger, failure, false));
        }
    };
    record.patch_op_count = Some(patch.ops.len());
    trace.write(
        TraceEventKind::Parse,
        json!({"attempt": attempt, "ops": patch.to_json(), "noop": patch.is_noop()}),
    )?;

    let candidate = match patch::apply(case.buggy.project(), &patch) {
        Ok(c) => c,
        Err(e) => {
            let failure = failure_from_patch_error(&e);
            trace.write(
                TraceEventKind::Apply,
                json!({"attempt": attempt, "error": e.to_string()}),
            )?;
            return Ok(fail(record, ledger, failure, false));
        }
    };
    // Candidate build: repack validates the project shape.
    let candidate_bytes = match project::repack(&case.buggy, &candidate) {
        Ok(bytes) => bytes,
        Err(ProjectError::InvalidProject(cause)) => {
            trace.write(
                TraceEventKind::Apply,
                json!({"attempt": attempt, "error": cause}),
            )?;
            return Ok(fail(
                record,
                ledger,
                FailureInfo::Application { op_index: None, cause },
                false,
            ));
        }
        Err(other) => {
            return Err(RunnerError::Io(std::io::Error::other(other.to_string())));
        }
    };
    let candidate_path = paths.candidate(attempt);
    if let Some(parent) = candidate_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&candidate_path, &candidate_bytes)?;
    trace.write(
        TraceEventKind::Apply,
        json!({
            "attempt": attempt,
            "op_count": patch.ops.len(),
            "candidate": candidate_path.to_string_lossy(),
        }),
    )?;

    let mut verdicts = VerdictPair::default();
    if plan.precheck_enabled {
        let pre = verify::precheck(&candidate, &case.suite, &precheck_schedule(strict_schedule));
        trace.write(
            TraceEventKind::Precheck,
            json!({"attempt": attempt, "overall_pass": pre.overall_pass, "per_check": pre.per_check}),
        )?;
        let pre_pass = pre.overall_pass;
        let failing = pre.failing_check_ids();
        verdicts.precheck = Some(pre);
        if !pre_pass {
            record.verdicts = Some(verdicts);
            // a precheck failure consumes the attempt; strict never runs
            return Ok(fail(record, ledger, FailureInfo::Precheck { failing_checks: failing }, true));
        }
    }

    let strict = verify::full_verify(&candidate, &case.suite, strict_schedule);
    trace.write(
        TraceEventKind::Verify,
        json!({"attempt": attempt, "overall_pass": strict.overall_pass, "per_check": strict.per_check}),
    )?;
    let strict_pass = strict.overall_pass;
    let failing = strict.failing_check_ids();
    verdicts.strict = Some(strict);
    record.verdicts = Some(verdicts);
    if strict_pass {
        record.outcome = AttemptOutcome::Success;
        let usage = Usage {
            input_tokens: record.input_tokens,
            output_tokens: record.output_tokens,
            images: record.payload_audit.images_sent,
        };
        record.cost_usd = ledger.add(attempt, &usage, pricing).as_usd();
        Ok(StageOutcome::StrictPass)
    } else {
        let divergence = verify::first_divergence_tick(
            &candidate,
            case.gold.project(),
            &precheck_schedule(strict_schedule),
        );
        Ok(fail(
            record,
            ledger,
            FailureInfo::StrictVerify {
                failing_checks: failing,
                candidate_divergence_tick: divergence,
            },
            true,
        ))
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_serde_is_flat() {
        let s = serde_json::to_string(&AttemptOutcome::Success).unwrap();
        assert_eq!(s, "\"success\"");
        let f = serde_json::to_string(&AttemptOutcome::Failure(FailureLayer::StrictVerify)).unwrap();
        assert_eq!(f, "\"strict_verify\"");
        let back: AttemptOutcome = serde_json::from_str(&f).unwrap();
        assert_eq!(back, AttemptOutcome::Failure(FailureLayer::StrictVerify));
    }

    #[test]
    fn classify_covers_every_layer() {
        let cases = [
            (FailureInfo::Request { message: "x".into() }, FailureLayer::Request),
            (FailureInfo::Extraction, FailureLayer::Extraction),
            (
                FailureInfo::Schema { violation: SchemaViolation::Budget { cap: 3, got: 5 } },
                FailureLayer::Schema,
            ),
            (
                FailureInfo::Application { op_index: Some(0), cause: "test: mismatch".into() },
                FailureLayer::Application,
            ),
            (FailureInfo::Precheck { failing_checks: vec![] }, FailureLayer::Precheck),
            (
                FailureInfo::StrictVerify {
                    failing_checks: vec![],
                    candidate_divergence_tick: None,
                },
                FailureLayer::StrictVerify,
            ),
        ];
        for (info, layer) in cases {
            assert_eq!(classify_failure(&info), layer);
        }
    }

    #[test]
    fn retry_templates() {
        let base = AttemptRecord {
            attempt_index: 0,
            plan_id: "P0".into(),
            payload_audit: PayloadAudit::default(),
            outcome: AttemptOutcome::Failure(FailureLayer::Schema),
            failure: Some(FailureInfo::Schema {
                violation: SchemaViolation::Budget { cap: 3, got: 5 },
            }),
            patch_op_count: Some(5),
            verdicts: None,
            input_tokens: 0,
            output_tokens: 0,
            cost_usd: 0.0,
            duration_ms: 0,
        };
        let msg = build_retry_context(&base).unwrap();
        assert!(msg.contains("operation budget 3, received 5"));

        let strict = AttemptRecord {
            failure: Some(FailureInfo::StrictVerify {
                failing_checks: vec!["c2".into(), "c4".into()],
                candidate_divergence_tick: Some(7),
            }),
            ..base.clone()
        };
        let msg = build_retry_context(&strict).unwrap();
        assert!(msg.contains("c2") && msg.contains("c4"));
        assert!(msg.contains("tick 7"));

        let extraction = AttemptRecord { failure: Some(FailureInfo::Extraction), ..base.clone() };
        let msg = build_retry_context(&extraction).unwrap();
        assert!(msg.contains("bare JSON array"));

        let ok = AttemptRecord { failure: None, outcome: AttemptOutcome::Success, ..base };
        assert!(build_retry_context(&ok).is_none());
    }
}
