//! The accounting layer on its own: exact decimal cost lines, the energy
//! bracket in stub and sampled modes, and the append-only trace writer.

use blockmend::accounting::{
    price_attempt, CostLedger, EnergyConfig, EnergyMeter, Pricing, TraceEventKind, TraceWriter,
    Usage,
};

fn main() {
    let pricing = Pricing {
        usd_per_1m_input_tokens: 0.15,
        usd_per_1m_output_tokens: 0.6,
        usd_per_image: 0.0001,
    };
    let mut ledger = CostLedger::new();
    for (attempt, usage) in [
        Usage { input_tokens: 2_310, output_tokens: 120, images: 0 },
        Usage { input_tokens: 2_480, output_tokens: 95, images: 2 },
        Usage { input_tokens: 2_655, output_tokens: 110, images: 2 },
    ]
    .iter()
    .enumerate()
    {
        let cost = ledger.add(attempt, usage, &pricing);
        println!(
            "attempt {attempt}: {} in / {} out / {} images -> ${:.7}",
            usage.input_tokens,
            usage.output_tokens,
            usage.images,
            cost.as_usd()
        );
    }
    println!("trajectory total: ${:.7} (exact decimal sum of the lines)\n", ledger.total_usd());

    let single = price_attempt(&Usage { input_tokens: 1_000, output_tokens: 0, images: 0 }, &pricing);
    println!("1,000 input tokens at $0.15/1M = ${}", single.as_usd());

    // stub energy: wall_ms * power / 3.6e6, deterministic given wall time
    let mut meter = EnergyMeter::new(EnergyConfig::Stub { power_w: 10.0 });
    meter.start().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(50));
    let report = meter.stop().unwrap();
    println!(
        "\nstub energy: {:?} over {} ms -> {:.9} Wh (samples: {})",
        report.method, report.wall_ms, report.total_wh, report.samples
    );

    // sampled mode polls a host counter; without one it falls back to stub
    let mut sampled = EnergyMeter::new(EnergyConfig::Sampled { interval_ms: 20 });
    sampled.start().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(60));
    let report = sampled.stop().unwrap();
    println!(
        "sampled bracket: method {:?} fell_back={} total {:.9} Wh",
        report.method, report.fell_back, report.total_wh
    );

    let trace_path = std::env::temp_dir().join("blockmend-trace-demo.jsonl");
    let mut writer = TraceWriter::create(&trace_path).unwrap();
    writer.write(TraceEventKind::Probe, serde_json::json!({"mismatch_rate": 0.25})).unwrap();
    writer.write(TraceEventKind::AttemptStart, serde_json::json!({"attempt": 0})).unwrap();
    writer.write(TraceEventKind::Summary, serde_json::json!({"strict_success": true})).unwrap();
    println!("\nwrote a sealed 3-event trace to {}", trace_path.display());
    let sealed = writer.write(TraceEventKind::Probe, serde_json::json!({}));
    println!("writing after the summary is rejected: {}", sealed.is_err());
}
