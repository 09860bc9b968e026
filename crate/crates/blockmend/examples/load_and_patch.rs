//! Load an .sb3 archive, pull a JSON Patch out of model-style prose,
//! validate it against a plan schema, apply it, and repack — the
//! project-model and patch-engine layers end to end.

use blockmend::patch::{apply, extract_patch, normalize, validate, PatchSchema};
use blockmend::project::{load_archive, repack, resolve_pointer, JsonPointer};

fn main() {
    let fixture = blockmend::fixtures::case_walk_distance();
    let archive = load_archive(&fixture.buggy_archive()).expect("valid archive");
    println!("loaded archive with {} entries:", archive.entry_count());
    for name in archive.entry_names() {
        println!("  - {name}");
    }

    let ptr = JsonPointer::parse("/targets/1/blocks/m/inputs/DX").unwrap();
    println!(
        "\nbuggy step size at {ptr}: {}",
        resolve_pointer(archive.project(), &ptr).unwrap()
    );

    // a response the way a model would send it: prose around a fenced block
    let response = format!(
        "The walk loop moves 8 units per step but the target needs 10.\n\
         ```json\n{}\n```\nThat should fix it.",
        serde_json::to_string_pretty(&fixture.fix_ops).unwrap()
    );
    let patch = extract_patch(&response).expect("patch embedded in prose");
    let patch = validate(patch, &PatchSchema::with_cap(3)).expect("within budget");
    let patch = normalize(patch);
    println!("\nextracted {} operation(s): {}", patch.ops.len(), patch.to_json());

    let repaired = apply(archive.project(), &patch).expect("patch applies");
    println!("repaired step size: {}", resolve_pointer(&repaired, &ptr).unwrap());

    let out = repack(&archive, &repaired).expect("valid candidate");
    let reloaded = load_archive(&out).unwrap();
    println!(
        "\nrepacked candidate: {} bytes, {} entries, assets byte-identical: {}",
        out.len(),
        reloaded.entry_count(),
        archive
            .assets()
            .all(|(name, bytes)| reloaded.entry_bytes(name) == Some(bytes))
    );
}
