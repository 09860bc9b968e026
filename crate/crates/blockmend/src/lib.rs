//! Execution-feedback repair for block-language projects.
//!
//! The pipeline probes a buggy `.sb3` project against a gold reference,
//! compresses what it saw into a coarse scheduling signal, picks a repair
//! plan under one of four controller modes, asks a model backend for a
//! bounded JSON Patch, rebuilds and verifies the candidate in stages, and
//! accounts for every trajectory's cost, image payload, and host-side
//! energy. Matrix runs over (models × modes × cases) aggregate into the
//! summary tables.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run -p blockmend --example load_and_patch
//! cargo run -p blockmend --example probe_signals
//! cargo run -p blockmend --example stage_snapshots
//! cargo run -p blockmend --example plan_selection
//! cargo run -p blockmend --example scripted_trajectory
//! cargo run -p blockmend --example matrix_tables
//! ```
//!
//! The `blockmend` binary exposes the same flow as subcommands
//! (`run`, `case`, `aggregate`, `audit`, `deltas`, `validate`).

pub mod accounting;
pub mod aggregate;
pub mod controller;
pub mod fixtures;
pub mod gateway;
pub mod matrix;
pub mod patch;
pub mod project;
pub mod trajectory;
pub mod vm;

pub use controller::{
    compute_signals, decide_plan, ControllerConfig, ControllerMode, RepairPlan, ScheduleSignal,
};
pub use matrix::{load_records, run_matrix, validate_matrix, RunMatrixSpec};
pub use patch::{apply, extract_patch, normalize, validate, PatchDocument, PatchSchema};
pub use project::{canonical_serialize, load_archive, repack, resolve_pointer, JsonPointer,
    ProjectDocument, Sb3Archive};
pub use trajectory::{
    build_retry_context, classify_failure, run_trajectory, AttemptRecord, FailureLayer,
    RepairCase, TrajectoryRecord,
};
