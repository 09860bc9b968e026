//! Deterministic scripted transport: replies come from a fixture file
//! keyed by (case id, attempt, plan id). Omitted key fields are wildcards;
//! the most specific matching entry wins, ties broken by file order.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, CallContext, GatewayError, ModelResponse, WirePayload};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
    #[serde(default)]
    pub response_text: String,
    #[serde(default)]
    pub output_tokens: u64,
    /// Simulate a transport failure instead of replying.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail_request: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedFixture {
    pub replies: Vec<ScriptedReply>,
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path)
            .map_err(|e| GatewayError::RequestFailure(format!("fixture {path:?}: {e}")))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::RequestFailure(format!("fixture {path:?}: {e}")))
    }

    pub fn lookup(&self, ctx: &CallContext) -> Option<&ScriptedReply> {
        self.replies
            .iter()
            .filter_map(|r| {
                let mut score = 0u8;
                if let Some(c) = &r.case_id {
                    if c != &ctx.case_id {
                        return None;
                    }
                    score += 4;
                }
                if let Some(a) = r.attempt {
                    if a != ctx.attempt {
                        return None;
                    }
                    score += 2;
                }
                if let Some(p) = &r.plan_id {
                    if p != &ctx.plan_id {
                        return None;
                    }
                    score += 1;
                }
                Some((score, r))
            })
            .fold(None::<(u8, &ScriptedReply)>, |best, (score, r)| match best {
                Some((bs, _)) if bs >= score => best,
                _ => Some((score, r)),
            })
            .map(|(_, r)| r)
    }
}

// Fixture files are parsed once per process; matrix runs hit the same file
// for every trajectory.
static CACHE: Mutex<Option<(std::path::PathBuf, ScriptedFixture)>> = Mutex::new(None);

pub(super) fn call_scripted(
    fixture_path: &Path,
    payload: &WirePayload,
    ctx: &CallContext,
) -> Result<ModelResponse, GatewayError> {
    let fixture = {
        let mut cache = CACHE.lock().unwrap();
        match &*cache {
            Some((path, fixture)) if path == fixture_path => fixture.clone(),
            _ => {
                let fixture = ScriptedFixture::load(fixture_path)?;
                *cache = Some((fixture_path.to_path_buf(), fixture.clone()));
                fixture
            }
        }
    };
    let reply = fixture.lookup(ctx).ok_or_else(|| {
        GatewayError::RequestFailure(format!(
            "no scripted reply for case={} attempt={} plan={}",
            ctx.case_id, ctx.attempt, ctx.plan_id
        ))
    })?;
    if reply.fail_request {
        return Err(GatewayError::RequestFailure(format!(
            "scripted transport failure for case={} attempt={}",
            ctx.case_id, ctx.attempt
        )));
    }
    let text_bytes: u64 = payload.texts.iter().map(|t| t.len() as u64).sum();
    Ok(ModelResponse {
        raw_text: reply.response_text.clone(),
        input_tokens: estimate_tokens(text_bytes),
        output_tokens: reply.output_tokens,
        latency_ms: 0,
        transport_ok: true,
        token_source: "estimated".into(),
    })
}
