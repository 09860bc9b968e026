//! Bounded structural patches over a project document.
//!
//! Repairs arrive as RFC 6902-style operation lists, usually embedded in
//! model prose. The pipeline stages here are extract → validate →
//! normalize → apply; each stage's failure maps to its own layer in the
//! trajectory accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::Value;
use thiserror::Error;

use crate::project::{parse_array_index, JsonPointer, ProjectDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchOpKind {
    Add,
    Remove,
    Replace,
    Move,
    Copy,
    Test,
}

impl PatchOpKind {
    pub const ALL: [PatchOpKind; 6] = [
        PatchOpKind::Add,
        PatchOpKind::Remove,
        PatchOpKind::Replace,
        PatchOpKind::Move,
        PatchOpKind::Copy,
        PatchOpKind::Test,
    ];

    fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "add" => PatchOpKind::Add,
            "remove" => PatchOpKind::Remove,
            "replace" => PatchOpKind::Replace,
            "move" => PatchOpKind::Move,
            "copy" => PatchOpKind::Copy,
            "test" => PatchOpKind::Test,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PatchOpKind::Add => "add",
            PatchOpKind::Remove => "remove",
            PatchOpKind::Replace => "replace",
            PatchOpKind::Move => "move",
            PatchOpKind::Copy => "copy",
            PatchOpKind::Test => "test",
        }
    }

    fn needs_value(self) -> bool {
        matches!(self, PatchOpKind::Add | PatchOpKind::Replace | PatchOpKind::Test)
    }

    fn needs_from(self) -> bool {
        matches!(self, PatchOpKind::Move | PatchOpKind::Copy)
    }
}

impl fmt::Display for PatchOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchOperation {
    pub kind: PatchOpKind,
    pub path: JsonPointer,
    pub value: Option<Value>,
    pub from: Option<JsonPointer>,
    /// Fields beyond the RFC set, kept verbatim until `normalize` drops them.
    pub extras: BTreeMap<String, Value>,
}

impl PatchOperation {
    fn from_json(v: &Value) -> Option<Self> {
        let obj = v.as_object()?;
        let kind = PatchOpKind::from_str(obj.get("op")?.as_str()?)?;
        let path = JsonPointer::parse(obj.get("path")?.as_str()?).ok()?;
        let value = obj.get("value").cloned();
        let from = match obj.get("from") {
            Some(f) => Some(JsonPointer::parse(f.as_str()?).ok()?),
            None => None,
        };
        if kind.needs_value() && value.is_none() {
            return None;
        }
        if kind.needs_from() && from.is_none() {
            return None;
        }
        let extras = obj
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "op" | "path" | "value" | "from"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Some(PatchOperation { kind, path, value, from, extras })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("op".into(), Value::String(self.kind.as_str().into()));
        obj.insert("path".into(), Value::String(self.path.to_string()));
        if let Some(from) = &self.from {
            obj.insert("from".into(), Value::String(from.to_string()));
        }
        if let Some(value) = &self.value {
            obj.insert("value".into(), value.clone());
        }
        for (k, v) in &self.extras {
            obj.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(obj)
    }
}

/// An ordered operation list. An empty list is valid input; it is flagged
/// as a no-op and the unmodified candidate proceeds to verification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchDocument {
    pub ops: Vec<PatchOperation>,
}

impl PatchDocument {
    pub fn is_noop(&self) -> bool {
        self.ops.is_empty()
    }

    /// Wire form: always the bare JSON array of operations.
    pub fn to_json(&self) -> Value {
        Value::Array(self.ops.iter().map(PatchOperation::to_json).collect())
    }
}

/// Per-plan constraints on a patch, enforced before application.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PatchSchema {
    pub max_ops: usize,
    pub allowed_kinds: BTreeSet<PatchOpKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_path_prefixes: Option<Vec<String>>,
}

impl PatchSchema {
    pub fn with_cap(max_ops: usize) -> Self {
        assert!(max_ops >= 1, "patch op cap must be positive");
        PatchSchema {
            max_ops,
            allowed_kinds: PatchOpKind::ALL.into_iter().collect(),
            allowed_path_prefixes: None,
        }
    }

    /// JSON-schema-style rendering embedded in prompts so the generator
    /// sees the same constraints `validate` enforces.
    pub fn to_json_schema(&self) -> Value {
        let kinds: Vec<Value> =
            self.allowed_kinds.iter().map(|k| Value::String(k.as_str().into())).collect();
        let mut schema = serde_json::json!({
            "type": "array",
            "maxItems": self.max_ops,
            "items": {
                "type": "object",
                "properties": {
                    "op": {"type": "string", "enum": kinds},
                    "path": {"type": "string"},
                    "from": {"type": "string"},
                    "value": {}
                },
                "required": ["op", "path"],
                "additionalProperties": false
            }
        });
        if let Some(prefixes) = &self.allowed_path_prefixes {
            schema["items"]["properties"]["path"]["x-allowed-prefixes"] =
                Value::Array(prefixes.iter().map(|p| Value::String(p.clone())).collect());
        }
        schema
    }
}

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("no parseable patch in response text")]
    ExtractionFailure,
    #[error("patch has {got} ops, budget is {cap}")]
    BudgetExceeded { cap: usize, got: usize },
    #[error("op {index} kind {kind} is not allowed")]
    ForbiddenKind { index: usize, kind: PatchOpKind },
    #[error("op {index} path {path} is outside the allowed prefixes")]
    ForbiddenPath { index: usize, path: String },
    #[error("op {index} ({kind}) failed: {cause}")]
    ApplicationFailure { index: usize, kind: PatchOpKind, cause: ApplyCause },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyCause {
    /// `path` (or its parent, for add) does not resolve.
    MissingPath,
    /// `from` does not resolve.
    MissingFrom,
    /// Array token is not a valid index for the target array.
    BadIndex,
    /// A `test` op's value did not match.
    TestFailed,
    /// `move` target lies inside the subtree being moved.
    MoveIntoSelf,
    /// Root-level remove/move-from is not representable.
    RootRemoval,
}

impl fmt::Display for ApplyCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ApplyCause::MissingPath => "path does not resolve",
            ApplyCause::MissingFrom => "from path does not resolve",
            ApplyCause::BadIndex => "invalid array index",
            ApplyCause::TestFailed => "test value mismatch",
            ApplyCause::MoveIntoSelf => "cannot move a value into its own subtree",
            ApplyCause::RootRemoval => "cannot remove the document root",
        };
        f.write_str(s)
    }
}

/// Pulls the first JSON value out of free-form response text that parses as
/// an operation list (or an object carrying an `"ops"` array). Fenced code
/// blocks are preferred over inline JSON; within each source, candidates
/// are taken left to right.
pub fn extract_patch(raw: &str) -> Result<PatchDocument, PatchError> {
    for block in fenced_blocks(raw) {
        if let Some(doc) = first_patch_value(block) {
            return Ok(doc);
        }
    }
    first_patch_value(raw).ok_or(PatchError::ExtractionFailure)
}

fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. ```json) up to end of line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

fn first_patch_value(text: &str) -> Option<PatchDocument> {
    let bytes = text.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b != b'[' && *b != b'{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(doc) = as_patch_document(&value) {
                return Some(doc);
            }
        }
    }
    None
}

fn as_patch_document(value: &Value) -> Option<PatchDocument> {
    let list = match value {
        Value::Array(items) => items.as_slice(),
        Value::Object(obj) => obj.get("ops")?.as_array()?.as_slice(),
        _ => return None,
    };
    let ops = list.iter().map(PatchOperation::from_json).collect::<Option<Vec<_>>>()?;
    Some(PatchDocument { ops })
}

/// Schema enforcement: kind membership, path prefixes, and the op cap.
pub fn validate(patch: PatchDocument, schema: &PatchSchema) -> Result<PatchDocument, PatchError> {
    if patch.ops.len() > schema.max_ops {
        return Err(PatchError::BudgetExceeded { cap: schema.max_ops, got: patch.ops.len() });
    }
    for (index, op) in patch.ops.iter().enumerate() {
        if !schema.allowed_kinds.contains(&op.kind) {
            return Err(PatchError::ForbiddenKind { index, kind: op.kind });
        }
        if let Some(prefixes) = &schema.allowed_path_prefixes {
            let mut paths = vec![&op.path];
            if let Some(from) = &op.from {
                paths.push(from);
            }
            for p in paths {
                let inside = prefixes.iter().any(|prefix| {
                    JsonPointer::parse(prefix).map(|pp| pp.contains(p)).unwrap_or(false)
                });
                if !inside {
                    return Err(PatchError::ForbiddenPath { index, path: p.to_string() });
                }
            }
        }
    }
    Ok(patch)
}

/// Drops extraneous fields and re-renders pointers canonically. Order is
/// preserved; the function is idempotent.
pub fn normalize(mut patch: PatchDocument) -> PatchDocument {
    for op in &mut patch.ops {
        op.extras.clear();
    }
    patch
}

/// Applies the patch per RFC 6902 against a copy of the document. The
/// input is never modified; the first failing op aborts the whole
/// application and reports its index and cause.
pub fn apply(
    project: &ProjectDocument,
    patch: &PatchDocument,
) -> Result<ProjectDocument, PatchError> {
    let mut doc = project.root().clone();
    apply_to_value(&mut doc, patch)?;
    // The patched tree is carried as-is even when it breaks the project
    // shape: repack re-validates, and the interpreter degrades malformed
    // structure to inert blocks.
    Ok(ProjectDocument::from_value_unvalidated(doc))
}

/// Same engine over a bare JSON value; used by apply and by tests that
/// compare against an independent reference implementation.
pub fn apply_to_value(doc: &mut Value, patch: &PatchDocument) -> Result<(), PatchError> {
    let original = doc.clone();
    for (index, op) in patch.ops.iter().enumerate() {
        if let Err(cause) = apply_one(doc, op) {
            *doc = original;
            return Err(PatchError::ApplicationFailure { index, kind: op.kind, cause });
        }
    }
    Ok(())
}

fn apply_one(doc: &mut Value, op: &PatchOperation) -> Result<(), ApplyCause> {
    match op.kind {
        PatchOpKind::Add => add(doc, &op.path, op.value.clone().expect("checked at extract")),
        PatchOpKind::Remove => remove(doc, &op.path).map(|_| ()),
        PatchOpKind::Replace => {
            let target = lookup_mut(doc, &op.path).ok_or(ApplyCause::MissingPath)?;
            *target = op.value.clone().expect("checked at extract");
            Ok(())
        }
        PatchOpKind::Move => {
            let from = op.from.as_ref().expect("checked at extract");
            if from == &op.path {
                return Ok(());
            }
            if from.is_strict_prefix_of(&op.path) {
                return Err(ApplyCause::MoveIntoSelf);
            }
            let value = remove(doc, from).map_err(|c| match c {
                ApplyCause::MissingPath => ApplyCause::MissingFrom,
                other => other,
            })?;
            add(doc, &op.path, value)
        }
        PatchOpKind::Copy => {
            let from = op.from.as_ref().expect("checked at extract");
            let value =
                crate::project::resolve_in_value(doc, from).ok_or(ApplyCause::MissingFrom)?.clone();
            add(doc, &op.path, value)
        }
        PatchOpKind::Test => {
            let target =
                crate::project::resolve_in_value(doc, &op.path).ok_or(ApplyCause::MissingPath)?;
            if target == op.value.as_ref().expect("checked at extract") {
                Ok(())
            } else {
                Err(ApplyCause::TestFailed)
            }
        }
    }
}

fn lookup_mut<'a>(doc: &'a mut Value, ptr: &JsonPointer) -> Option<&'a mut Value> {
    let mut cur = doc;
    for seg in ptr.segments() {
        match cur {
            Value::Object(map) => cur = map.get_mut(seg)?,
            Value::Array(items) => {
                let idx = parse_array_index(seg, items.len())?;
                cur = items.get_mut(idx)?;
            }
            _ => return None,
        }
    }
    Some(cur)
}

fn add(doc: &mut Value, path: &JsonPointer, value: Value) -> Result<(), ApplyCause> {
    let Some((parent_ptr, last)) = path.parent() else {
        *doc = value;
        return Ok(());
    };
    let parent = lookup_mut(doc, &parent_ptr).ok_or(ApplyCause::MissingPath)?;
    match parent {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
            Ok(())
        }
        Value::Array(items) => {
            if last == "-" {
                items.push(value);
                return Ok(());
            }
            // add permits inserting at the one-past-the-end position
            let idx = parse_array_index(last, items.len() + 1).ok_or(ApplyCause::BadIndex)?;
            items.insert(idx, value);
            Ok(())
        }
        _ => Err(ApplyCause::MissingPath),
    }
}

fn remove(doc: &mut Value, path: &JsonPointer) -> Result<Value, ApplyCause> {
    let Some((parent_ptr, last)) = path.parent() else {
        return Err(ApplyCause::RootRemoval);
    };
    let parent = lookup_mut(doc, &parent_ptr).ok_or(ApplyCause::MissingPath)?;
    match parent {
        Value::Object(map) => map.remove(last).ok_or(ApplyCause::MissingPath),
        Value::Array(items) => {
            let idx = parse_array_index(last, items.len()).ok_or(ApplyCause::BadIndex)?;
            Ok(items.remove(idx))
        }
        _ => Err(ApplyCause::MissingPath),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::project::canonical_json_bytes;
    use serde_json::json;

    fn parse_ops(v: Value) -> PatchDocument {
        as_patch_document(&v).expect("well-formed ops")
    }

    #[test]
    fn extract_bare_array() {
        let doc = extract_patch(r#"[{"op":"replace","path":"/x","value":1}]"#).unwrap();
        assert_eq!(doc.ops.len(), 1);
        assert_eq!(doc.ops[0].kind, PatchOpKind::Replace);
    }

    #[test]
    fn extract_prefers_fenced_block() {
        let raw = "Sure. {\"not\":\"a patch\"}\n```json\n[{\"op\":\"remove\",\"path\":\"/a\"}]\n```\ntrailing";
        let doc = extract_patch(raw).unwrap();
        assert_eq!(doc.ops[0].kind, PatchOpKind::Remove);
    }

    #[test]
    fn extract_ops_envelope() {
        let doc = extract_patch(r#"{"ops":[{"op":"test","path":"","value":3}]}"#).unwrap();
        assert_eq!(doc.ops.len(), 1);
    }

    #[test]
    fn extract_skips_non_patch_json() {
        let raw = r#"The stats are {"count": 3}. Apply [{"op":"add","path":"/k","value":[]}]"#;
        let doc = extract_patch(raw).unwrap();
        assert_eq!(doc.ops[0].kind, PatchOpKind::Add);
    }

    #[test]
    fn extract_failure_on_prose() {
        assert!(matches!(extract_patch("I cannot help with that."), Err(PatchError::ExtractionFailure)));
    }

    #[test]
    fn validate_cap_boundary() {
        let ops = json!([
            {"op":"remove","path":"/a"},
            {"op":"remove","path":"/b"},
            {"op":"remove","path":"/c"}
        ]);
        let schema = PatchSchema::with_cap(3);
        assert!(validate(parse_ops(ops.clone()), &schema).is_ok());
        let mut four = ops.as_array().unwrap().clone();
        four.push(json!({"op":"remove","path":"/d"}));
        let err = validate(parse_ops(Value::Array(four)), &schema).unwrap_err();
        assert!(matches!(err, PatchError::BudgetExceeded { cap: 3, got: 4 }));
    }

    #[test]
    fn validate_forbidden_kind() {
        let mut schema = PatchSchema::with_cap(5);
        schema.allowed_kinds.remove(&PatchOpKind::Move);
        let doc = parse_ops(json!([{"op":"move","from":"/a","path":"/b"}]));
        assert!(matches!(validate(doc, &schema).unwrap_err(), PatchError::ForbiddenKind { index: 0, .. }));
    }

    #[test]
    fn validate_path_prefixes() {
        let mut schema = PatchSchema::with_cap(5);
        schema.allowed_path_prefixes = Some(vec!["/targets".into()]);
        let ok = parse_ops(json!([{"op":"remove","path":"/targets/0/x"}]));
        assert!(validate(ok, &schema).is_ok());
        let bad = parse_ops(json!([{"op":"remove","path":"/meta"}]));
        assert!(matches!(validate(bad, &schema).unwrap_err(), PatchError::ForbiddenPath { .. }));
    }

    #[test]
    fn normalize_drops_extras_and_is_idempotent() {
        let doc = parse_ops(json!([{"op":"remove","path":"/a~1b","reason":"cleanup"}]));
        assert!(!doc.ops[0].extras.is_empty());
        let once = normalize(doc);
        assert!(once.ops[0].extras.is_empty());
        assert_eq!(once.ops[0].path.segments(), ["a/b"]);
        assert_eq!(once.to_json()[0]["path"], json!("/a~1b"));
        let twice = normalize(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn apply_add_and_input_untouched() {
        let project =
            ProjectDocument::new(json!({"targets":[{"isStage":true}]})).unwrap();
        let before = canonical_json_bytes(project.root());
        let patch = parse_ops(json!([{"op":"add","path":"/targets/0/name","value":"cat"}]));
        let out = apply(&project, &patch).unwrap();
        assert_eq!(out.root()["targets"][0]["name"], json!("cat"));
        assert_eq!(before, canonical_json_bytes(project.root()));
    }

    #[test]
    fn apply_replace_missing_path_fails_at_op_zero() {
        let project = ProjectDocument::new(json!({"targets":[{"isStage":true}]})).unwrap();
        let patch = parse_ops(json!([{"op":"replace","path":"/nope","value":1}]));
        let err = apply(&project, &patch).unwrap_err();
        assert!(matches!(err, PatchError::ApplicationFailure { index: 0, .. }));
    }

    #[test]
    fn apply_is_atomic_on_later_failure() {
        let mut doc = json!({"a": 1});
        let patch = parse_ops(json!([
            {"op":"add","path":"/b","value":2},
            {"op":"test","path":"/a","value":999}
        ]));
        let err = apply_to_value(&mut doc, &patch).unwrap_err();
        assert!(matches!(
            err,
            PatchError::ApplicationFailure { index: 1, cause: ApplyCause::TestFailed, .. }
        ));
        assert_eq!(doc, json!({"a": 1}));
    }

    #[test]
    fn apply_array_append_dash() {
        let mut doc = json!({"xs": [1, 2]});
        let patch = parse_ops(json!([{"op":"add","path":"/xs/-","value":3}]));
        apply_to_value(&mut doc, &patch).unwrap();
        assert_eq!(doc, json!({"xs": [1, 2, 3]}));
    }

    #[test]
    fn apply_move_into_own_subtree_rejected() {
        let mut doc = json!({"a": {"b": 1}});
        let patch = parse_ops(json!([{"op":"move","from":"/a","path":"/a/b/c"}]));
        let err = apply_to_value(&mut doc, &patch).unwrap_err();
        assert!(matches!(
            err,
            PatchError::ApplicationFailure { cause: ApplyCause::MoveIntoSelf, .. }
        ));
    }

    #[test]
    fn schema_rendering_carries_cap_and_kinds() {
        let schema = PatchSchema::with_cap(3);
        let rendered = schema.to_json_schema();
        assert_eq!(rendered["maxItems"], json!(3));
        assert_eq!(rendered["items"]["properties"]["op"]["enum"].as_array().unwrap().len(), 6);
    }
}
