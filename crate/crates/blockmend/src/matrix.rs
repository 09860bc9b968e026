//! Matrix runs over (endpoints × modes × cases) with resume support and a
//! run manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerMode};
use crate::gateway::ModelEndpoint;
use crate::trajectory::{run_trajectory, RepairCase, RunnerError, TrajectoryRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMatrixSpec {
    pub endpoints: Vec<ModelEndpoint>,
    pub modes: Vec<ControllerMode>,
    pub cases: Vec<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    /// Controller template; its mode field is overridden per matrix cell.
    pub controller: ControllerConfig,
}

/// On-disk run configuration consumed by the CLI: endpoints, the
/// controller template, and optional defaults that flags may override.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfigFile {
    pub endpoints: Vec<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<ControllerMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, MatrixError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| MatrixError::Fixture(format!("config {path:?}: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("duplicate matrix triple: model={model} mode={mode} case={case}")]
    DuplicateTriple { model: String, mode: String, case: String },
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct MatrixRun {
    pub records: Vec<TrajectoryRecord>,
    pub executed: usize,
    pub skipped: usize,
    pub manifest_path: PathBuf,
}

/// Directory holding one trajectory's artifacts.
pub fn trajectory_dir(output_dir: &Path, model_id: &str, mode: ControllerMode, case_id: &str) -> PathBuf {
    output_dir.join(sanitize(model_id)).join(mode.as_str()).join(sanitize(case_id))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// Runs every (endpoint, mode, case) triple exactly once. Fixtures load
/// and gold-soundness checks happen before any model call; completed
/// trajectories (an existing, parseable record.json) are skipped so
/// interrupted runs resume.
pub fn run_matrix(spec: &RunMatrixSpec) -> Result<MatrixRun, MatrixError> {
    spec.controller.validate().map_err(|e| MatrixError::Fixture(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut cases = Vec::new();
    for dir in &spec.cases {
        let case = RepairCase::load(dir).map_err(|e| MatrixError::Fixture(e.to_string()))?;
        if !seen.insert(case.case_id.clone()) {
            return Err(MatrixError::Fixture(format!("duplicate case id {}", case.case_id)));
        }
        cases.push(case);
    }
    let mut triples = BTreeSet::new();
    for endpoint in &spec.endpoints {
        for mode in &spec.modes {
            for case in &cases {
                if !triples.insert((endpoint.model_id.clone(), *mode, case.case_id.clone())) {
                    return Err(MatrixError::DuplicateTriple {
                        model: endpoint.model_id.clone(),
                        mode: mode.as_str().into(),
                        case: case.case_id.clone(),
                    });
                }
            }
        }
    }

    std::fs::create_dir_all(&spec.output_dir)?;
    let manifest_path = spec.output_dir.join("manifest.json");
    write_manifest(&manifest_path, spec, &cases)?;

    struct Job<'a> {
        endpoint: &'a ModelEndpoint,
        mode: ControllerMode,
        case: &'a RepairCase,
        dir: PathBuf,
    }
    let mut jobs = Vec::new();
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for endpoint in &spec.endpoints {
        for mode in &spec.modes {
            for case in &cases {
                let dir = trajectory_dir(&spec.output_dir, &endpoint.model_id, *mode, &case.case_id);
                let record_path = dir.join("record.json");
                if let Ok(bytes) = std::fs::read(&record_path) {
                    if let Ok(record) = serde_json::from_slice::<TrajectoryRecord>(&bytes) {
                        records.push(record);
                        skipped += 1;
                        continue;
                    }
                }
                jobs.push(Job { endpoint, mode: *mode, case, dir });
            }
        }
    }

    let executed = jobs.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<TrajectoryRecord, RunnerError>>> = Mutex::new(Vec::new());
    let workers = spec.parallelism.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let mut config = spec.controller.clone();
                config.mode = job.mode;
                let result = run_trajectory(job.case, job.endpoint, &config, spec.seed, &job.dir);
                results.lock().unwrap().push(result);
            });
        }
    });
    for result in results.into_inner().unwrap() {
        records.push(result?);
    }
    records.sort_by(|a, b| {
        (a.model_id.as_str(), a.mode, a.case_id.as_str())
            .cmp(&(b.model_id.as_str(), b.mode, b.case_id.as_str()))
    });
    Ok(MatrixRun { records, executed, skipped, manifest_path })
}

fn write_manifest(path: &Path, spec: &RunMatrixSpec, cases: &[RepairCase]) -> std::io::Result<()> {
    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": spec.seed,
        "parallelism": spec.parallelism,
        "modes": spec.modes,
        "endpoints": spec.endpoints,
        "controller": spec.controller,
        "thresholds": spec.controller.thresholds,
        "pricing": spec
            .endpoints
            .iter()
            .map(|e| (e.model_id.clone(), e.pricing))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "cases": cases.iter().map(|c| c.case_id.clone()).collect::<Vec<_>>(),
    });
    std::fs::write(path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
}

/// Per-cell completeness check over a record set.
#[derive(Debug, Clone, Serialize)]
pub struct CompletenessReport {
    pub pass: bool,
    pub expected_per_cell: usize,
    pub cells: Vec<CellCount>,
    pub missing: Vec<Triple>,
    pub duplicates: Vec<Triple>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCount {
    pub model_id: String,
    pub mode: ControllerMode,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub model_id: String,
    pub mode: ControllerMode,
    pub case_id: String,
}

/// Verifies that every (endpoint, mode) cell holds exactly one record per
/// case: no holes, no duplicates.
pub fn validate_matrix(records: &[TrajectoryRecord], spec: &RunMatrixSpec) -> CompletenessReport {
    let case_ids: Vec<String> = spec
        .cases
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let mut counts: std::collections::BTreeMap<(String, ControllerMode), usize> = Default::default();
    let mut seen: std::collections::BTreeMap<Triple, usize> = Default::default();
    for r in records {
        *counts.entry((r.model_id.clone(), r.mode)).or_default() += 1;
        *seen.entry(Triple {
            model_id: r.model_id.clone(),
            mode: r.mode,
            case_id: r.case_id.clone(),
        })
        .or_default() += 1;
    }
    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for endpoint in &spec.endpoints {
        for mode in &spec.modes {
            let count = counts.get(&(endpoint.model_id.clone(), *mode)).copied().unwrap_or(0);
            cells.push(CellCount { model_id: endpoint.model_id.clone(), mode: *mode, count });
            for case_id in &case_ids {
                let triple = Triple {
                    model_id: endpoint.model_id.clone(),
                    mode: *mode,
                    case_id: case_id.clone(),
                };
                if !seen.contains_key(&triple) {
                    missing.push(triple);
                }
            }
        }
    }
    let duplicates: Vec<Triple> =
        seen.iter().filter(|(_, n)| **n > 1).map(|(t, _)| t.clone()).collect();
    let expected = case_ids.len();
    let pass = missing.is_empty()
        && duplicates.is_empty()
        && cells.iter().all(|c| c.count == expected);
    CompletenessReport { pass, expected_per_cell: expected, cells, missing, duplicates }
}

/// Loads every record.json under a run directory.
pub fn load_records(dir: &Path) -> std::io::Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    collect_records(dir, &mut records)?;
    records.sort_by(|a, b| {
        (a.model_id.as_str(), a.mode, a.case_id.as_str())
            .cmp(&(b.model_id.as_str(), b.mode, b.case_id.as_str()))
    });
    Ok(records)
}

fn collect_records(dir: &Path, out: &mut Vec<TrajectoryRecord>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_records(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "record.json") {
            if let Ok(record) = serde_json::from_slice(&std::fs::read(&path)?) {
                out.push(record);
            }
        }
    }
    Ok(())
}
