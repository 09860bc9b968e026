//! The two request wire styles rendered from one prompt bundle, plus the
//! payload audit and a remote endpoint descriptor.

use blockmend::controller::{ControllerConfig, ControllerMode};
use blockmend::gateway::{
    assemble_request, build_prompt, extract_parts, CaseBrief, ModelEndpoint, RequestStyle,
    Transport,
};
use blockmend::project::ProjectDocument;
use blockmend::vm::verify::{default_probe_schedule, probe};

fn main() {
    let fixture = blockmend::fixtures::case_walk_distance();
    let buggy = ProjectDocument::new(fixture.buggy.clone()).unwrap();
    let gold = ProjectDocument::new(fixture.gold.clone()).unwrap();
    let suite = serde_json::from_value(fixture.suite.clone()).unwrap();
    let report = probe(&buggy, &gold, &suite, &default_probe_schedule(1)).unwrap();

    let config = ControllerConfig::default_with_seed(ControllerMode::AlwaysOn, 1);
    let signal = blockmend::controller::compute_signals(&report, &config);
    let plan = blockmend::controller::decide_plan(&config, &signal, 0).unwrap();
    let brief = CaseBrief {
        case_id: fixture.case_id.clone(),
        description: Some("cat stops short".into()),
        localization_hints: vec!["walk loop step size".into()],
        project_json: serde_json::to_string(&fixture.buggy).unwrap(),
        asset_images: Vec::new(),
    };
    let bundle = build_prompt(&brief, &signal, &plan, None, &report.snapshots);
    println!(
        "bundle: {} attachments of {} available, schema cap {}\n",
        bundle.attachments.len(),
        bundle.images_available,
        bundle.response_schema["maxItems"]
    );

    for style in [RequestStyle::ResponsesStyle, RequestStyle::ChatStyle] {
        let payload = assemble_request(&bundle, style);
        let (texts, images) = extract_parts(&payload.body);
        println!("{style:?}:");
        println!("  top-level keys: {:?}", payload.body.as_object().unwrap().keys().collect::<Vec<_>>());
        println!("  {} texts, {} images decode back out", texts.len(), images.len());
        let rendered = payload.body.to_string();
        println!("  body is {} bytes on the wire\n", rendered.len());
    }

    // a remote endpoint carries a credential *reference*, never a secret
    let remote = ModelEndpoint {
        model_id: "prod-model".into(),
        request_style: RequestStyle::ChatStyle,
        transport: Transport::Remote {
            base_url: "https://api.example.com/v1/chat/completions".into(),
            credential_env: Some("PROD_MODEL_API_KEY".into()),
            timeout_ms: 30_000,
        },
        pricing: blockmend::accounting::Pricing {
            usd_per_1m_input_tokens: 0.15,
            usd_per_1m_output_tokens: 0.6,
            usd_per_image: 0.0001,
        },
    };
    println!("remote endpoint config:\n{}", serde_json::to_string_pretty(&remote).unwrap());
}
