//! Model backend adapter: prompt assembly, two wire styles, scripted and
//! remote transports, and the payload audit.

mod prompt;
mod scripted;
mod wire;

pub use prompt::{build_prompt, CaseBrief};
pub use scripted::{ScriptedFixture, ScriptedReply};
pub use wire::{assemble_request, attachment_from_asset, extract_parts, WireImage, WirePayload};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::Pricing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStyle {
    /// Ordered record list mixing `input_text` and `input_image` records.
    ResponsesStyle,
    /// Message list with data-URL `image_url` attachments.
    ChatStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Remote {
        base_url: String,
        /// Name of the environment variable holding the credential; the
        /// credential itself never enters configs or traces.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
    Scripted { fixture: PathBuf },
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub model_id: String,
    pub request_style: RequestStyle,
    pub transport: Transport,
    #[serde(default = "Pricing::free")]
    pub pricing: Pricing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentOrigin {
    ProbeSnapshot,
    ProjectAsset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub origin: AttachmentOrigin,
}

/// Everything needed to render a request in either wire style.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub response_schema: serde_json::Value,
    pub attachments: Vec<Attachment>,
    /// Images that were available when the bundle was built, whether or
    /// not the plan attached them.
    pub images_available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub transport_ok: bool,
    /// "provider" when usage came from the backend, "estimated" for the
    /// ceil(bytes/4) fallback.
    pub token_source: String,
}

/// Realized payload measurements for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PayloadAudit {
    pub images_available: u64,
    pub images_sent: u64,
    pub image_bytes_sent: u64,
    pub text_bytes_sent: u64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request failed: {0}")]
    RequestFailure(String),
}

/// Network-level retries are separate from repair attempts and capped low.
const TRANSPORT_RETRIES: u32 = 2;

/// Identifies the calling attempt so scripted fixtures can key replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub case_id: String,
    pub attempt: usize,
    pub plan_id: String,
}

/// Dispatches one request. The audit always reflects the payload that was
/// handed to the transport, so image accounting covers failed requests
/// whose bytes were already assembled and transmitted.
pub fn call_model(
    endpoint: &ModelEndpoint,
    payload: &WirePayload,
    ctx: &CallContext,
) -> (Result<ModelResponse, GatewayError>, PayloadAudit) {
    let audit = audit_payload(payload);
    let result = match &endpoint.transport {
        Transport::Scripted { fixture } => scripted::call_scripted(fixture, payload, ctx),
        Transport::Remote { base_url, credential_env, timeout_ms } => {
            call_remote(endpoint, payload, base_url, credential_env.as_deref(), *timeout_ms)
        }
    };
    (result, audit)
}

fn audit_payload(payload: &WirePayload) -> PayloadAudit {
    PayloadAudit {
        images_available: payload.images_available as u64,
        images_sent: payload.images.len() as u64,
        image_bytes_sent: payload.images.iter().map(|i| i.bytes.len() as u64).sum(),
        text_bytes_sent: payload.texts.iter().map(|t| t.len() as u64).sum(),
    }
}

pub(crate) fn estimate_tokens(byte_len: u64) -> u64 {
    byte_len.div_ceil(4)
}

fn call_remote(
    endpoint: &ModelEndpoint,
    payload: &WirePayload,
    base_url: &str,
    credential_env: Option<&str>,
    timeout_ms: u64,
) -> Result<ModelResponse, GatewayError> {
    // Remote transports carry lossless PNG instead of the local PPM rasters.
    let wire = wire::with_png_images(payload, endpoint.request_style);
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_millis(timeout_ms))
        .build()
        .map_err(|e| GatewayError::RequestFailure(e.to_string()))?;
    let credential = credential_env.and_then(|name| std::env::var(name).ok());
    let started = std::time::Instant::now();
    let mut last_err = String::new();
    for _ in 0..=TRANSPORT_RETRIES {
        let mut req = client.post(base_url).json(&wire.body);
        if let Some(token) = &credential {
            req = req.bearer_auth(token);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                let latency_ms = started.elapsed().as_millis() as u64;
                let body: serde_json::Value = resp
                    .json()
                    .map_err(|e| GatewayError::RequestFailure(format!("bad response body: {e}")))?;
                return Ok(parse_remote_response(&body, &wire, latency_ms));
            }
            Ok(resp) => last_err = format!("status {}", resp.status()),
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(GatewayError::RequestFailure(format!(
        "{last_err} (after {} transport retries)",
        TRANSPORT_RETRIES
    )))
}

fn parse_remote_response(
    body: &serde_json::Value,
    wire: &WirePayload,
    latency_ms: u64,
) -> ModelResponse {
    let raw_text = extract_response_text(body).unwrap_or_default();
    let usage = body.get("usage");
    let read = |keys: [&str; 2]| -> Option<u64> {
        let u = usage?;
        keys.iter().find_map(|k| u.get(*k).and_then(serde_json::Value::as_u64))
    };
    let provider_in = read(["input_tokens", "prompt_tokens"]);
    let provider_out = read(["output_tokens", "completion_tokens"]);
    let text_bytes: u64 = wire.texts.iter().map(|t| t.len() as u64).sum();
    let (input_tokens, output_tokens, token_source) = match (provider_in, provider_out) {
        (Some(i), Some(o)) => (i, o, "provider"),
        _ => (estimate_tokens(text_bytes), estimate_tokens(raw_text.len() as u64), "estimated"),
    };
    ModelResponse {
        raw_text,
        input_tokens,
        output_tokens,
        latency_ms,
        transport_ok: true,
        token_source: token_source.to_string(),
    }
}

fn extract_response_text(body: &serde_json::Value) -> Option<String> {
    if let Some(t) = body.get("output_text").and_then(serde_json::Value::as_str) {
        return Some(t.to_string());
    }
    if let Some(records) = body.get("output").and_then(serde_json::Value::as_array) {
        let text: String = records
            .iter()
            .filter_map(|r| r.get("text").and_then(serde_json::Value::as_str))
            .collect();
        if !text.is_empty() {
            return Some(text);
        }
    }
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(serde_json::Value::as_str))
                .collect(),
        ),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::EvidencePolicy;

    fn image_attachment(n: usize) -> Attachment {
        Attachment {
            bytes: vec![7u8; n],
            media_type: "image/x-portable-pixmap".into(),
            width: 2,
            height: 2,
            origin: AttachmentOrigin::ProbeSnapshot,
        }
    }

    fn bundle_with_images(count: usize, bytes_each: usize) -> PromptBundle {
        PromptBundle {
            system_text: "sys".into(),
            user_text: "user".into(),
            response_schema: serde_json::json!({"type": "array"}),
            attachments: (0..count).map(|_| image_attachment(bytes_each)).collect(),
            images_available: count + 1,
        }
    }

    #[test]
    fn audit_counts_bytes_additively() {
        let bundle = bundle_with_images(2, 32_445);
        let payload = assemble_request(&bundle, RequestStyle::ResponsesStyle);
        let audit = audit_payload(&payload);
        assert_eq!(audit.images_sent, 2);
        assert_eq!(audit.image_bytes_sent, 64_890);
        assert_eq!(audit.images_available, 3);
        assert_eq!(audit.text_bytes_sent, 7);
    }

    #[test]
    fn unreachable_remote_fails_after_retries() {
        let endpoint = ModelEndpoint {
            model_id: "m".into(),
            request_style: RequestStyle::ChatStyle,
            transport: Transport::Remote {
                base_url: "http://127.0.0.1:9/never".into(),
                credential_env: None,
                timeout_ms: 300,
            },
            pricing: Pricing::free(),
        };
        let bundle = bundle_with_images(0, 0);
        let payload = assemble_request(&bundle, RequestStyle::ChatStyle);
        let ctx = CallContext { case_id: "c".into(), attempt: 0, plan_id: "P0".into() };
        let (result, audit) = call_model(&endpoint, &payload, &ctx);
        assert!(matches!(result, Err(GatewayError::RequestFailure(_))));
        assert_eq!(audit.images_sent, 0);
    }

    #[test]
    fn remote_response_parsing_variants() {
        let wire = assemble_request(&bundle_with_images(0, 0), RequestStyle::ChatStyle);
        let chat = serde_json::json!({
            "choices": [{"message": {"content": "patch here"}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 3}
        });
        let r = parse_remote_response(&chat, &wire, 5);
        assert_eq!((r.input_tokens, r.output_tokens), (11, 3));
        assert_eq!(r.token_source, "provider");
        assert_eq!(r.raw_text, "patch here");

        let responses = serde_json::json!({"output_text": "x"});
        let r = parse_remote_response(&responses, &wire, 5);
        assert_eq!(r.token_source, "estimated");
        assert_eq!(r.input_tokens, estimate_tokens(7));
    }

    #[test]
    fn evidence_policy_is_ordered_for_escalation() {
        assert!(EvidencePolicy::TextOnly < EvidencePolicy::Multimodal);
    }
}
