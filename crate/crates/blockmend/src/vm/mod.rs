//! Deterministic interpreter for the supported block subset, plus the
//! probe and staged verification built on top of it.

pub mod interp;
pub mod program;
pub mod snapshot;
pub mod suite;
pub mod value;
pub mod verify;

pub use interp::{execute, ExecutionTrace, RunSchedule, SpriteState, VmState};
pub use snapshot::{capture_snapshot, StageSnapshot, SNAPSHOT_HEIGHT, SNAPSHOT_WIDTH};
pub use suite::{Check, EvalPoint, Predicate, TestSuite};
pub use value::Scalar;
pub use verify::{
    full_verify, precheck, probe, ProbeReport, ProbeSummary, VerdictReport, VerdictStage,
    VerifyError,
};
