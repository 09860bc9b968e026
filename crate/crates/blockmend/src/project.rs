//! Project archives and the JSON document they carry.
//!
//! An `.sb3` file is a zip archive whose executable logic lives in a single
//! `project.json` entry; every other entry is an opaque asset that must
//! survive a load/repack cycle byte-for-byte.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Cursor, Read, Write};

use serde::de::{DeserializeSeed, MapAccess, SeqAccess, Visitor};
use serde_json::Value;
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

pub const PROJECT_ENTRY: &str = "project.json";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("input is not a zip archive: {0}")]
    NotAnArchive(String),
    #[error("archive has no {PROJECT_ENTRY} entry")]
    MissingProjectJson,
    #[error("malformed project json: {0}")]
    MalformedJson(String),
    #[error("invalid project: {0}")]
    InvalidProject(String),
}

/// Parsed `project.json` tree. Object key order is not part of document
/// identity; equality and hashing go through [`canonical_serialize`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectDocument {
    root: Value,
}

impl ProjectDocument {
    /// Wraps a JSON tree after checking the structural invariants: the root
    /// is an object with a "targets" array containing exactly one stage.
    pub fn new(root: Value) -> Result<Self, ProjectError> {
        validate_project_shape(&root)?;
        Ok(ProjectDocument { root })
    }

    /// Strict parse: rejects duplicate object keys (their pointer semantics
    /// would be ambiguous) before applying the shape checks of [`new`].
    pub fn parse(bytes: &[u8]) -> Result<Self, ProjectError> {
        let root = parse_json_strict(bytes).map_err(ProjectError::MalformedJson)?;
        Self::new(root)
    }

    /// Wraps a tree produced by patch application without re-checking the
    /// shape invariants. Repack validates before writing an archive, and
    /// the interpreter treats missing structure as an empty program.
    pub fn from_value_unvalidated(root: Value) -> Self {
        ProjectDocument { root }
    }

    pub fn root(&self) -> &Value {
        &self.root
    }

    pub fn into_root(self) -> Value {
        self.root
    }

    pub fn targets(&self) -> &[Value] {
        self.root["targets"].as_array().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Structural equality modulo key order.
    pub fn structurally_equal(&self, other: &ProjectDocument) -> bool {
        canonical_serialize(self) == canonical_serialize(other)
    }
}

fn validate_project_shape(root: &Value) -> Result<(), ProjectError> {
    let obj = root
        .as_object()
        .ok_or_else(|| ProjectError::InvalidProject("root is not an object".into()))?;
    let targets = obj
        .get("targets")
        .and_then(Value::as_array)
        .ok_or_else(|| ProjectError::InvalidProject("missing \"targets\" array".into()))?;
    let stages = targets
        .iter()
        .filter(|t| t.get("isStage").and_then(Value::as_bool) == Some(true))
        .count();
    if stages != 1 {
        return Err(ProjectError::InvalidProject(format!(
            "expected exactly one stage target, found {stages}"
        )));
    }
    Ok(())
}

/// Deterministic serialization: object keys sorted, shortest round-trip
/// number form, no insignificant whitespace. Equal trees give equal bytes.
pub fn canonical_serialize(project: &ProjectDocument) -> Vec<u8> {
    canonical_json_bytes(project.root())
}

pub fn canonical_json_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                // serde_json's string/number writer already emits the
                // canonical escape and shortest-round-trip forms.
                serde_json::to_writer(&mut *out, k).expect("string serialization");
                out.push(b':');
                write_canonical(&map[k.as_str()], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        other => serde_json::to_writer(&mut *out, other).expect("scalar serialization"),
    }
}

/// A loaded `.sb3` archive: the parsed project plus every entry's bytes.
/// The original compressed byte stream is retained so that [`repack`] can
/// copy untouched asset entries without recompressing them.
#[derive(Debug, Clone)]
pub struct Sb3Archive {
    raw: Vec<u8>,
    entries: Vec<(String, Vec<u8>)>,
    project: ProjectDocument,
}

impl Sb3Archive {
    pub fn project(&self) -> &ProjectDocument {
        &self.project
    }

    /// Entry names in archive order.
    pub fn entry_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Decompressed content of a named entry.
    pub fn entry_bytes(&self, name: &str) -> Option<&[u8]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Non-project entries, in archive order.
    pub fn assets(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.entries
            .iter()
            .filter(|(n, _)| n != PROJECT_ENTRY)
            .map(|(n, b)| (n.as_str(), b.as_slice()))
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }
}

/// Loads an `.sb3` archive, parsing its `project.json` and retaining every
/// entry (assets are opaque and preserved verbatim by [`repack`]).
pub fn load_archive(bytes: &[u8]) -> Result<Sb3Archive, ProjectError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
    let mut entries = Vec::with_capacity(zip.len());
    let mut project_count = 0usize;
    for i in 0..zip.len() {
        let mut file = zip
            .by_index(i)
            .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
        let mut buf = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut buf)
            .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
        if file.name() == PROJECT_ENTRY {
            project_count += 1;
        }
        entries.push((file.name().to_string(), buf));
    }
    if project_count == 0 {
        return Err(ProjectError::MissingProjectJson);
    }
    if project_count > 1 {
        return Err(ProjectError::InvalidProject(format!(
            "archive contains {project_count} {PROJECT_ENTRY} entries"
        )));
    }
    let project_bytes = entries
        .iter()
        .find(|(n, _)| n == PROJECT_ENTRY)
        .map(|(_, b)| b.clone())
        .expect("counted above");
    let project = ProjectDocument::parse(&project_bytes)?;
    Ok(Sb3Archive { raw: bytes.to_vec(), entries, project })
}

/// Repacks an archive with a (possibly modified) project document.
///
/// The `project.json` entry is rewritten as the canonical serialization of
/// `project`, stored uncompressed; every other entry's compressed stream is
/// copied from the source archive unchanged, so asset bytes are stable
/// across arbitrary load/repack cycles. Entry order is preserved.
pub fn repack(archive: &Sb3Archive, project: &ProjectDocument) -> Result<Vec<u8>, ProjectError> {
    validate_project_shape(project.root())
        .map_err(|e| ProjectError::InvalidProject(e.to_string()))?;
    let mut src = ZipArchive::new(Cursor::new(archive.raw.as_slice()))
        .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
    let mut out = ZipWriter::new(Cursor::new(Vec::new()));
    let stored = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
    for i in 0..src.len() {
        let name = src
            .name_for_index(i)
            .ok_or(ProjectError::MissingProjectJson)?
            .to_string();
        if name == PROJECT_ENTRY {
            out.start_file(&name, stored)
                .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
            out.write_all(&canonical_serialize(project))
                .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
        } else {
            let file = src
                .by_index_raw(i)
                .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
            out.raw_copy_file(file)
                .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?;
        }
    }
    Ok(out
        .finish()
        .map_err(|e| ProjectError::NotAnArchive(e.to_string()))?
        .into_inner())
}

/// Builds a fresh `.sb3` from a project tree plus asset entries. Used by
/// fixture generation; production repairs go through [`repack`].
pub fn pack_new(project: &ProjectDocument, assets: &[(&str, &[u8])]) -> Vec<u8> {
    let mut out = ZipWriter::new(Cursor::new(Vec::new()));
    let stored = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
    let deflated = SimpleFileOptions::default().compression_method(CompressionMethod::Deflated);
    out.start_file(PROJECT_ENTRY, stored).expect("zip write");
    out.write_all(&canonical_serialize(project)).expect("zip write");
    for (name, bytes) in assets {
        out.start_file(*name, deflated).expect("zip write");
        out.write_all(bytes).expect("zip write");
    }
    out.finish().expect("zip finish").into_inner()
}

/// A decoded RFC 6901 pointer: a list of reference tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct JsonPointer {
    segments: Vec<String>,
}

impl JsonPointer {
    pub fn root() -> Self {
        JsonPointer { segments: Vec::new() }
    }

    pub fn from_segments<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        JsonPointer { segments: segments.into_iter().map(Into::into).collect() }
    }

    /// Decodes a pointer string. `~1` becomes `/`, `~0` becomes `~`; a `~`
    /// not followed by `0` or `1` is kept literally (re-escaped on output).
    pub fn parse(s: &str) -> Result<Self, PointerParseError> {
        if s.is_empty() {
            return Ok(Self::root());
        }
        if !s.starts_with('/') {
            return Err(PointerParseError(s.to_string()));
        }
        let segments = s[1..]
            .split('/')
            .map(|tok| {
                let mut out = String::with_capacity(tok.len());
                let mut chars = tok.chars().peekable();
                while let Some(c) = chars.next() {
                    if c == '~' {
                        match chars.peek() {
                            Some('0') => {
                                chars.next();
                                out.push('~');
                            }
                            Some('1') => {
                                chars.next();
                                out.push('/');
                            }
                            _ => out.push('~'),
                        }
                    } else {
                        out.push(c);
                    }
                }
                out
            })
            .collect();
        Ok(JsonPointer { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn parent(&self) -> Option<(JsonPointer, &str)> {
        let (last, rest) = self.segments.split_last()?;
        Some((JsonPointer { segments: rest.to_vec() }, last.as_str()))
    }

    /// True when `self` is a strict ancestor of `other`.
    pub fn is_strict_prefix_of(&self, other: &JsonPointer) -> bool {
        other.segments.len() > self.segments.len()
            && other.segments[..self.segments.len()] == self.segments[..]
    }

    /// True when `other` equals `self` or lives underneath it.
    pub fn contains(&self, other: &JsonPointer) -> bool {
        other.segments.len() >= self.segments.len()
            && other.segments[..self.segments.len()] == self.segments[..]
    }
}

impl fmt::Display for JsonPointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.segments {
            f.write_str("/")?;
            f.write_str(&seg.replace('~', "~0").replace('/', "~1"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("json pointer must be empty or start with '/': {0:?}")]
pub struct PointerParseError(pub String);

/// RFC 6901 evaluation. Returns `None` where the pointer does not resolve;
/// there is no error case.
pub fn resolve_pointer<'a>(project: &'a ProjectDocument, ptr: &JsonPointer) -> Option<&'a Value> {
    resolve_in_value(project.root(), ptr)
}

pub fn resolve_in_value<'a>(mut value: &'a Value, ptr: &JsonPointer) -> Option<&'a Value> {
    for seg in ptr.segments() {
        match value {
            Value::Object(map) => value = map.get(seg)?,
            Value::Array(items) => value = items.get(parse_array_index(seg, items.len())?)?,
            _ => return None,
        }
    }
    Some(value)
}

/// Array index token per RFC 6901: decimal digits, no leading zeros, no
/// sign. `-` never resolves (it names the position past the end).
pub fn parse_array_index(token: &str, len: usize) -> Option<usize> {
    if token == "-" {
        return None;
    }
    if token.is_empty() || (token.len() > 1 && token.starts_with('0')) {
        return None;
    }
    if !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let idx: usize = token.parse().ok()?;
    (idx < len).then_some(idx)
}

/// JSON parse that rejects duplicate object keys.
pub fn parse_json_strict(bytes: &[u8]) -> Result<Value, String> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = StrictValue.deserialize(&mut de).map_err(|e| e.to_string())?;
    de.end().map_err(|e| e.to_string())?;
    Ok(value)
}

struct StrictValue;

impl<'de> DeserializeSeed<'de> for StrictValue {
    type Value = Value;

    fn deserialize<D>(self, deserializer: D) -> Result<Value, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        deserializer.deserialize_any(StrictValue)
    }
}

impl<'de> Visitor<'de> for StrictValue {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("any JSON value without duplicate object keys")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_f64<E>(self, v: f64) -> Result<Value, E> {
        Ok(serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_none<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_some<D>(self, deserializer: D) -> Result<Value, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        StrictValue.deserialize(deserializer)
    }

    fn visit_seq<A>(self, mut seq: A) -> Result<Value, A::Error>
    where
        A: SeqAccess<'de>,
    {
        let mut items = Vec::new();
        while let Some(v) = seq.next_element_seed(StrictValue)? {
            items.push(v);
        }
        Ok(Value::Array(items))
    }

    fn visit_map<A>(self, mut map: A) -> Result<Value, A::Error>
    where
        A: MapAccess<'de>,
    {
        let mut seen = BTreeMap::new();
        while let Some(key) = map.next_key::<String>()? {
            let value = map.next_value_seed(StrictValue)?;
            if seen.insert(key.clone(), value).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate object key {key:?}")));
            }
        }
        Ok(Value::Object(seen.into_iter().collect()))
    }
}
