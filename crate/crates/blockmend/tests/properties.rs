//! Property tests for the structural core: pointer escaping, canonical
//! serialization, patch application purity, and wire-style equivalence.

mod support;

use proptest::prelude::*;
use serde_json::{json, Value};

use blockmend::gateway::{assemble_request, extract_parts, PromptBundle, RequestStyle};
use blockmend::patch::{self, PatchSchema};
use blockmend::project::{canonical_json_bytes, resolve_in_value, JsonPointer};

fn arb_json(depth: u32) -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        (-1000i64..1000).prop_map(Value::from),
        "[a-z~/]{0,6}".prop_map(Value::from),
    ];
    leaf.prop_recursive(depth, 64, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z~/]{0,4}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn arb_segments() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z0-9~/]{0,5}", 0..5)
}

proptest! {
    #[test]
    fn pointer_round_trips_segments(segments in arb_segments()) {
        let ptr = JsonPointer::from_segments(segments.clone());
        let rendered = ptr.to_string();
        let back = JsonPointer::parse(&rendered).unwrap();
        prop_assert_eq!(back.segments(), segments.as_slice());
    }

    // resolve_in_value must agree with serde_json's own RFC 6901 resolver
    // on pointers drawn over arbitrary documents.
    #[test]
    fn pointer_resolution_matches_serde_json(doc in arb_json(3), segments in arb_segments()) {
        let ptr = JsonPointer::from_segments(segments);
        let rendered = ptr.to_string();
        let mine = resolve_in_value(&doc, &ptr);
        let theirs = doc.pointer(&rendered);
        prop_assert_eq!(mine, theirs, "pointer {}", rendered);
    }

    #[test]
    fn canonical_serialization_is_idempotent(doc in arb_json(3)) {
        let once = canonical_json_bytes(&doc);
        let reparsed: Value = serde_json::from_slice(&once).unwrap();
        prop_assert_eq!(once, canonical_json_bytes(&reparsed));
    }

    // distinct trees keep distinct canonical bytes; equal trees collide
    #[test]
    fn canonical_serialization_separates_distinct_trees(a in arb_json(3), b in arb_json(3)) {
        let ca = canonical_json_bytes(&a);
        let cb = canonical_json_bytes(&b);
        prop_assert_eq!(a == b, ca == cb);
    }

    #[test]
    fn apply_never_mutates_input(doc in arb_json(3), seed in any::<u64>()) {
        let mut rng = support::Rng(seed);
        let ops = support::gen_patch(&mut rng, &doc);
        let raw = Value::Array(ops).to_string();
        let patch = patch::extract_patch(&raw).unwrap();
        let before = canonical_json_bytes(&doc);
        let wrapped = blockmend::project::ProjectDocument::from_value_unvalidated(doc);
        let _ = patch::apply(&wrapped, &patch);
        prop_assert_eq!(before, canonical_json_bytes(wrapped.root()));
    }

    #[test]
    fn validated_patches_respect_the_cap(doc in arb_json(2), seed in any::<u64>(), cap in 1usize..6) {
        let mut rng = support::Rng(seed);
        let ops = support::gen_patch(&mut rng, &doc);
        let raw = Value::Array(ops).to_string();
        let patch = patch::extract_patch(&raw).unwrap();
        let schema = PatchSchema::with_cap(cap);
        if let Ok(validated) = patch::validate(patch, &schema) {
            prop_assert!(validated.ops.len() <= cap);
        }
    }

    #[test]
    fn normalize_is_idempotent(doc in arb_json(2), seed in any::<u64>()) {
        let mut rng = support::Rng(seed);
        let ops = support::gen_patch(&mut rng, &doc);
        let raw = Value::Array(ops).to_string();
        let once = patch::normalize(patch::extract_patch(&raw).unwrap());
        let twice = patch::normalize(once.clone());
        prop_assert_eq!(once.to_json(), twice.to_json());
    }

    // the extraction oracle: fencing a patch changes nothing about what is
    // extracted, and matches a strip-fences-then-parse reference routine
    #[test]
    fn fenced_extraction_matches_reference(doc in arb_json(2), seed in any::<u64>(), lang in "[a-z]{0,4}") {
        let mut rng = support::Rng(seed);
        let ops = Value::Array(support::gen_patch(&mut rng, &doc));
        let fenced = format!("Some prose first.\n```{lang}\n{ops}\n```\nAnd after.");
        let extracted = patch::extract_patch(&fenced).unwrap().to_json();
        let reference = strip_fences_then_parse(&fenced).unwrap();
        let direct = patch::extract_patch(&ops.to_string()).unwrap().to_json();
        prop_assert_eq!(&extracted, &direct);
        // reference keeps raw op objects; compare through the same parse
        let reference_doc = patch::extract_patch(&reference.to_string()).unwrap().to_json();
        prop_assert_eq!(extracted, reference_doc);
    }

    #[test]
    fn wire_styles_carry_equal_content(
        system in "[ -~]{0,40}",
        user in "[ -~]{0,80}",
        images in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..64), 0..3),
    ) {
        let bundle = PromptBundle {
            system_text: system,
            user_text: user,
            response_schema: json!({"type": "array", "maxItems": 3}),
            attachments: images
                .iter()
                .map(|bytes| blockmend::gateway::Attachment {
                    bytes: bytes.clone(),
                    media_type: "image/png".into(),
                    width: 1,
                    height: 1,
                    origin: blockmend::gateway::AttachmentOrigin::ProbeSnapshot,
                })
                .collect(),
            images_available: images.len(),
        };
        let a = assemble_request(&bundle, RequestStyle::ResponsesStyle);
        let b = assemble_request(&bundle, RequestStyle::ChatStyle);
        let (texts_a, images_a) = extract_parts(&a.body);
        let (texts_b, images_b) = extract_parts(&b.body);
        prop_assert_eq!(texts_a, texts_b);
        prop_assert_eq!(&images_a, &images_b);
        prop_assert_eq!(images_a.len(), images.len());
    }
}

/// Reference routine for the fenced-extraction oracle: cut the first fenced
/// block out and parse its body as JSON.
fn strip_fences_then_parse(raw: &str) -> Option<Value> {
    let open = raw.find("```")?;
    let after_lang = raw[open + 3..].find('\n')? + open + 4;
    let close = raw[after_lang..].find("```")? + after_lang;
    serde_json::from_str(raw[after_lang..close].trim()).ok()
}
