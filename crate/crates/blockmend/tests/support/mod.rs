//! Test-side oracles, independent of the library implementations they
//! check: a second RFC 6902 applier built on string pointers and
//! serde_json's own resolver, a minimal zip reader that parses headers
//! directly, and a seeded generator for (document, patch) corpora.
#![allow(dead_code)] // each test binary uses its own subset

use serde_json::{json, Value};

// ---------------------------------------------------------------------
// reference JSON Patch applier
// ---------------------------------------------------------------------

/// Applies `patch` (raw operation objects) to a copy of `doc`. Returns the
/// patched value or the index of the first failing operation.
pub fn reference_apply(doc: &Value, patch: &[Value]) -> Result<Value, usize> {
    let mut out = doc.clone();
    for (i, op) in patch.iter().enumerate() {
        if ref_apply_one(&mut out, op).is_err() {
            return Err(i);
        }
    }
    Ok(out)
}

fn unescape(token: &str) -> String {
    token.replace("~1", "/").replace("~0", "~")
}

fn split_last(path: &str) -> Option<(&str, &str)> {
    path.rfind('/').map(|i| (&path[..i], &path[i + 1..]))
}

fn array_index(token: &str, len: usize, allow_end: bool) -> Result<usize, ()> {
    if token == "-" {
        return if allow_end { Ok(len) } else { Err(()) };
    }
    if token.is_empty() || (token.len() > 1 && token.starts_with('0')) {
        return Err(());
    }
    if !token.chars().all(|c| c.is_ascii_digit()) {
        return Err(());
    }
    let idx: usize = token.parse().map_err(|_| ())?;
    let max = if allow_end { len } else { len.saturating_sub(1) };
    if len == 0 && !allow_end {
        return Err(());
    }
    if idx > max {
        return Err(());
    }
    Ok(idx)
}

fn ref_add(doc: &mut Value, path: &str, value: Value) -> Result<(), ()> {
    if path.is_empty() {
        *doc = value;
        return Ok(());
    }
    let (parent, last) = split_last(path).ok_or(())?;
    let parent = doc.pointer_mut(parent).ok_or(())?;
    match parent {
        Value::Object(map) => {
            map.insert(unescape(last), value);
            Ok(())
        }
        Value::Array(items) => {
            let idx = array_index(last, items.len(), true)?;
            items.insert(idx, value);
            Ok(())
        }
        _ => Err(()),
    }
}

fn ref_remove(doc: &mut Value, path: &str) -> Result<Value, ()> {
    let (parent, last) = split_last(path).ok_or(())?;
    let parent = doc.pointer_mut(parent).ok_or(())?;
    match parent {
        Value::Object(map) => map.remove(&unescape(last)).ok_or(()),
        Value::Array(items) => {
            let idx = array_index(last, items.len(), false)?;
            Ok(items.remove(idx))
        }
        _ => Err(()),
    }
}

fn ref_apply_one(doc: &mut Value, op: &Value) -> Result<(), ()> {
    let kind = op.get("op").and_then(Value::as_str).ok_or(())?;
    let path = op.get("path").and_then(Value::as_str).ok_or(())?;
    match kind {
        "add" => ref_add(doc, path, op.get("value").ok_or(())?.clone()),
        "remove" => ref_remove(doc, path).map(|_| ()),
        "replace" => {
            let value = op.get("value").ok_or(())?.clone();
            if path.is_empty() {
                *doc = value;
                return Ok(());
            }
            let target = doc.pointer_mut(path).ok_or(())?;
            *target = value;
            Ok(())
        }
        "move" => {
            let from = op.get("from").and_then(Value::as_str).ok_or(())?;
            if from == path {
                return Ok(());
            }
            if path.starts_with(from) && path[from.len()..].starts_with('/') {
                return Err(());
            }
            let value = ref_remove(doc, from)?;
            ref_add(doc, path, value)
        }
        "copy" => {
            let from = op.get("from").and_then(Value::as_str).ok_or(())?;
            let value = doc.pointer(from).ok_or(())?.clone();
            ref_add(doc, path, value)
        }
        "test" => {
            let target = doc.pointer(path).ok_or(())?;
            if target == op.get("value").ok_or(())? {
                Ok(())
            } else {
                Err(())
            }
        }
        _ => Err(()),
    }
}

// ---------------------------------------------------------------------
// independent zip reader
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RawZipEntry {
    pub name: String,
    pub method: u16,
    pub crc32: u32,
    pub uncompressed_size: u64,
    /// Compressed byte stream exactly as stored in the archive.
    pub raw_data: Vec<u8>,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses the central directory and local headers by hand. Supports plain
/// (non-zip64) archives, which is all the fixtures produce.
pub fn read_zip_raw(bytes: &[u8]) -> Result<Vec<RawZipEntry>, String> {
    const EOCD_MIN: usize = 22;
    if bytes.len() < EOCD_MIN {
        return Err("too short".into());
    }
    let eocd = (0..=(bytes.len() - EOCD_MIN).min(65_557))
        .map(|back| bytes.len() - EOCD_MIN - back)
        .find(|&i| bytes[i..i + 4] == [0x50, 0x4B, 0x05, 0x06])
        .ok_or("no end-of-central-directory signature")?;
    let entry_count = u16_at(bytes, eocd + 10) as usize;
    let cd_offset = u32_at(bytes, eocd + 16) as usize;

    let mut entries = Vec::with_capacity(entry_count);
    let mut pos = cd_offset;
    for _ in 0..entry_count {
        if bytes[pos..pos + 4] != [0x50, 0x4B, 0x01, 0x02] {
            return Err("bad central directory signature".into());
        }
        let method = u16_at(bytes, pos + 10);
        let crc32 = u32_at(bytes, pos + 16);
        let comp_size = u32_at(bytes, pos + 20) as usize;
        let uncomp_size = u32_at(bytes, pos + 24) as u64;
        let name_len = u16_at(bytes, pos + 28) as usize;
        let extra_len = u16_at(bytes, pos + 30) as usize;
        let comment_len = u16_at(bytes, pos + 32) as usize;
        let local_offset = u32_at(bytes, pos + 42) as usize;
        let name = String::from_utf8_lossy(&bytes[pos + 46..pos + 46 + name_len]).into_owned();

        if bytes[local_offset..local_offset + 4] != [0x50, 0x4B, 0x03, 0x04] {
            return Err(format!("bad local header for {name}"));
        }
        let local_name_len = u16_at(bytes, local_offset + 26) as usize;
        let local_extra_len = u16_at(bytes, local_offset + 28) as usize;
        let data_start = local_offset + 30 + local_name_len + local_extra_len;
        let raw_data = bytes[data_start..data_start + comp_size].to_vec();

        entries.push(RawZipEntry {
            name,
            method,
            crc32,
            uncompressed_size: uncomp_size,
            raw_data,
        });
        pos += 46 + name_len + extra_len + comment_len;
    }
    Ok(entries)
}

// ---------------------------------------------------------------------
// seeded corpus generator
// ---------------------------------------------------------------------

pub struct Rng(pub u64);

impl Rng {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n.max(1)
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

const KEYS: &[&str] = &["a", "b", "c", "k~v", "p/q", "", "0", "list"];

pub fn gen_value(rng: &mut Rng, depth: u32) -> Value {
    let pick = if depth == 0 { rng.below(4) } else { rng.below(6) };
    match pick {
        0 => json!(rng.below(100)),
        1 => json!(format!("s{}", rng.below(10))),
        2 => json!(rng.below(2) == 0),
        3 => Value::Null,
        4 => {
            let n = rng.below(4);
            Value::Array((0..n).map(|_| gen_value(rng, depth - 1)).collect())
        }
        _ => {
            let n = rng.below(4);
            let mut map = serde_json::Map::new();
            for _ in 0..n {
                map.insert(rng.pick(KEYS).to_string(), gen_value(rng, depth - 1));
            }
            Value::Object(map)
        }
    }
}

fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

/// Walks to a uniformly chosen existing location in `doc` and renders its
/// pointer string.
pub fn gen_existing_pointer(rng: &mut Rng, doc: &Value) -> String {
    let mut path = String::new();
    let mut cur = doc;
    loop {
        match cur {
            Value::Object(map) if !map.is_empty() && rng.below(3) > 0 => {
                let keys: Vec<&String> = map.keys().collect();
                let key = keys[rng.below(keys.len() as u64) as usize];
                path.push('/');
                path.push_str(&escape(key));
                cur = &map[key.as_str()];
            }
            Value::Array(items) if !items.is_empty() && rng.below(3) > 0 => {
                let i = rng.below(items.len() as u64) as usize;
                path.push_str(&format!("/{i}"));
                cur = &items[i];
            }
            _ => return path,
        }
    }
}

/// An existing pointer, sometimes perturbed into a likely-invalid one.
pub fn gen_pointer(rng: &mut Rng, doc: &Value) -> String {
    let base = gen_existing_pointer(rng, doc);
    match rng.below(16) {
        0 => format!("{base}/nope"),
        1 => format!("{base}/99"),
        2 => format!("{base}/-"),
        3 => format!("{base}/01"),
        _ => base,
    }
}

pub fn gen_patch(rng: &mut Rng, doc: &Value) -> Vec<Value> {
    let n = 1 + rng.below(5);
    (0..n)
        .map(|_| {
            let path = gen_pointer(rng, doc);
            match rng.below(6) {
                0 => json!({"op": "add", "path": path, "value": gen_value(rng, 1)}),
                1 => json!({"op": "remove", "path": path}),
                2 => json!({"op": "replace", "path": path, "value": gen_value(rng, 1)}),
                3 => json!({"op": "move", "from": gen_pointer(rng, doc), "path": path}),
                4 => json!({"op": "copy", "from": gen_pointer(rng, doc), "path": path}),
                _ => {
                    let value = if rng.below(2) == 0 {
                        doc.pointer(&path).cloned().unwrap_or(json!(0))
                    } else {
                        gen_value(rng, 1)
                    };
                    json!({"op": "test", "path": path, "value": value})
                }
            }
        })
        .collect()
}
