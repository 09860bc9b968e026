//! Executable check suites evaluated against execution traces.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::vm::interp::ExecutionTrace;
use crate::vm::value::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    #[serde(default = "EvalPoint::final_point")]
    pub eval: EvalPoint,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalPoint {
    /// The literal string "final": the state after the last scheduled tick.
    Final(FinalTag),
    AtTick { at_tick: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalTag {
    Final,
}

impl EvalPoint {
    pub fn final_point() -> EvalPoint {
        EvalPoint::Final(FinalTag::Final)
    }

    pub fn at_tick(t: u64) -> EvalPoint {
        EvalPoint::AtTick { at_tick: t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    VariableEquals { variable: String, value: Value },
    SpriteInBox { sprite: String, x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    BroadcastSeen { message: String },
    /// Costume indexes are 0-based throughout.
    CostumeIs { sprite: String, index: i64 },
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("duplicate check id {0:?}")]
    DuplicateCheckId(String),
    #[error("check {id:?} evaluates at tick {at_tick}, beyond the {max_ticks}-tick schedule")]
    TickOutOfSchedule { id: String, at_tick: u64, max_ticks: u64 },
    #[error("suite json: {0}")]
    Parse(#[from] serde_json::Error),
}

impl TestSuite {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SuiteError> {
        let suite: TestSuite = serde_json::from_slice(bytes)?;
        suite.check_ids_unique()?;
        Ok(suite)
    }

    pub fn check_ids_unique(&self) -> Result<(), SuiteError> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.checks {
            if !seen.insert(c.id.as_str()) {
                return Err(SuiteError::DuplicateCheckId(c.id.clone()));
            }
        }
        Ok(())
    }

    /// Every `at_tick` must fall inside the strict schedule the suite is
    /// defined against. Shorter prechecks simply skip unreached checks.
    pub fn validate_against(&self, max_ticks: u64) -> Result<(), SuiteError> {
        for c in &self.checks {
            if let EvalPoint::AtTick { at_tick } = c.eval {
                if at_tick > max_ticks {
                    return Err(SuiteError::TickOutOfSchedule {
                        id: c.id.clone(),
                        at_tick,
                        max_ticks,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Evaluates every check against one trace. A check scheduled past the end
/// of this trace is unreached and counts as passing for the stage that ran
/// the shorter schedule.
pub fn evaluate(suite: &TestSuite, trace: &ExecutionTrace, ticks: u64) -> Vec<(String, bool)> {
    suite
        .checks
        .iter()
        .map(|c| {
            let (eval_tick, reached) = match c.eval {
                EvalPoint::Final(_) => (ticks, true),
                EvalPoint::AtTick { at_tick } => (at_tick, at_tick <= ticks),
            };
            let pass = !reached || check_predicate(&c.predicate, trace, eval_tick);
            (c.id.clone(), pass)
        })
        .collect()
}

fn check_predicate(p: &Predicate, trace: &ExecutionTrace, tick: u64) -> bool {
    let state = trace.state_at(tick);
    match p {
        Predicate::VariableEquals { variable, value } => {
            let Some(actual) = state.variables.get(variable) else {
                return false;
            };
            match Scalar::from_json(value) {
                Some(expected) => actual.loose_eq(&expected),
                None => false,
            }
        }
        Predicate::SpriteInBox { sprite, x_min, x_max, y_min, y_max } => {
            let Some(s) = state.sprites.get(sprite) else {
                return false;
            };
            s.x >= *x_min && s.x <= *x_max && s.y >= *y_min && s.y <= *y_max
        }
        Predicate::BroadcastSeen { message } => {
            trace.broadcasts.iter().any(|b| b.tick <= tick && b.message == *message)
        }
        Predicate::CostumeIs { sprite, index } => {
            state.sprites.get(sprite).map(|s| s.costume_index == *index).unwrap_or(false)
        }
    }
}
