//! Per-trajectory money, energy, and trace bookkeeping.
//!
//! Costs are integer pico-USD internally so ledger sums are exact decimal
//! arithmetic; they render as USD floats in records. Energy is either
//! sampled from a host counter or derived from wall time by the stub
//! formula. The trace writer appends one JSON line per event.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

const PICO_PER_USD: i128 = 1_000_000_000_000;

/// Exact decimal money value in pico-USD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct PicoUsd(pub i128);

impl PicoUsd {
    pub fn from_usd(usd: f64) -> Self {
        PicoUsd((usd * PICO_PER_USD as f64).round() as i128)
    }

    pub fn as_usd(self) -> f64 {
        self.0 as f64 / PICO_PER_USD as f64
    }

    pub fn saturating_add(self, other: PicoUsd) -> PicoUsd {
        PicoUsd(self.0.saturating_add(other.0))
    }
}

/// Price card for one model, in USD per million tokens plus an optional
/// per-image charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    #[serde(rename = "usd_per_1M_input_tokens")]
    pub usd_per_1m_input_tokens: f64,
    #[serde(rename = "usd_per_1M_output_tokens")]
    pub usd_per_1m_output_tokens: f64,
    #[serde(default)]
    pub usd_per_image: f64,
}

impl Pricing {
    pub fn free() -> Self {
        Pricing { usd_per_1m_input_tokens: 0.0, usd_per_1m_output_tokens: 0.0, usd_per_image: 0.0 }
    }
}

/// Billed usage for one attempt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub images: u64,
}

/// usd = input·p_in/1e6 + output·p_out/1e6 + images·p_img, computed in
/// integer pico-USD. A price of p USD per million tokens is exactly p×1e6
/// pico-USD per token for any price with at most six decimals.
pub fn price_attempt(usage: &Usage, pricing: &Pricing) -> PicoUsd {
    let per_in = (pricing.usd_per_1m_input_tokens * 1e6).round() as i128;
    let per_out = (pricing.usd_per_1m_output_tokens * 1e6).round() as i128;
    let per_img = (pricing.usd_per_image * PICO_PER_USD as f64).round() as i128;
    PicoUsd(
        usage.input_tokens as i128 * per_in
            + usage.output_tokens as i128 * per_out
            + usage.images as i128 * per_img,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct CostLine {
    pub attempt_index: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub images: u64,
    pub usd: f64,
    #[serde(skip)]
    pub pico: PicoUsd,
}

#[derive(Debug, Default)]
pub struct CostLedger {
    lines: Vec<CostLine>,
    total: PicoUsd,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    pub fn add(&mut self, attempt_index: usize, usage: &Usage, pricing: &Pricing) -> PicoUsd {
        let pico = price_attempt(usage, pricing);
        self.lines.push(CostLine {
            attempt_index,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            images: usage.images,
            usd: pico.as_usd(),
            pico,
        });
        self.total = self.total.saturating_add(pico);
        pico
    }

    pub fn lines(&self) -> &[CostLine] {
        &self.lines
    }

    pub fn total(&self) -> PicoUsd {
        self.total
    }

    pub fn total_usd(&self) -> f64 {
        self.total.as_usd()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMethod {
    Sampled,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub method: EnergyMethod,
    pub total_wh: f64,
    pub wall_ms: u64,
    pub samples: u64,
    /// True when a sampled bracket fell back to the stub formula.
    #[serde(default)]
    pub fell_back: bool,
}

/// Reads a cumulative host energy counter in microjoules. The default
/// implementation targets the Linux powercap interface.
pub trait EnergyCounter: Send {
    fn read_uj(&mut self) -> std::io::Result<u64>;
    /// Counter wrap range, when the source documents one.
    fn max_range_uj(&self) -> Option<u64> {
        None
    }
}

pub struct PowercapCounter {
    path: std::path::PathBuf,
    max_range: Option<u64>,
}

impl PowercapCounter {
    pub fn open_default() -> std::io::Result<Self> {
        Self::open(Path::new("/sys/class/powercap/intel-rapl:0"))
    }

    pub fn open(dir: &Path) -> std::io::Result<Self> {
        let path = dir.join("energy_uj");
        std::fs::read_to_string(&path)?;
        let max_range = std::fs::read_to_string(dir.join("max_energy_range_uj"))
            .ok()
            .and_then(|s| s.trim().parse().ok());
        Ok(PowercapCounter { path, max_range })
    }
}

impl EnergyCounter for PowercapCounter {
    fn read_uj(&mut self) -> std::io::Result<u64> {
        let raw = std::fs::read_to_string(&self.path)?;
        raw.trim().parse().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn max_range_uj(&self) -> Option<u64> {
        self.max_range
    }
}

#[derive(Debug, Clone)]
pub enum EnergyConfig {
    /// Poll the host counter at the given interval.
    Sampled { interval_ms: u64 },
    /// wh = wall_ms · power_w / 3,600,000. Deterministic given wall time.
    Stub { power_w: f64 },
}

impl EnergyConfig {
    pub fn default_stub() -> Self {
        EnergyConfig::Stub { power_w: 10.0 }
    }
}

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("energy bracket already open for this trajectory")]
    AlreadyOpen,
    #[error("energy bracket was never opened")]
    NotOpen,
}

/// One start/stop bracket per trajectory. A sampled bracket that cannot
/// open its counter falls back to the stub formula and says so.
pub struct EnergyMeter {
    config: EnergyConfig,
    active: Option<ActiveBracket>,
}

struct ActiveBracket {
    started: Instant,
    sampler: Option<SamplerHandle>,
    fell_back: bool,
}

struct SamplerHandle {
    stop: Arc<AtomicBool>,
    join: std::thread::JoinHandle<(f64, u64)>,
}

impl EnergyMeter {
    pub fn new(config: EnergyConfig) -> Self {
        EnergyMeter { config, active: None }
    }

    pub fn start(&mut self) -> Result<(), EnergyError> {
        self.start_with(|| PowercapCounter::open_default().map(|c| Box::new(c) as Box<dyn EnergyCounter>))
    }

    pub fn start_with<F>(&mut self, open_counter: F) -> Result<(), EnergyError>
    where
        F: FnOnce() -> std::io::Result<Box<dyn EnergyCounter>>,
    {
        if self.active.is_some() {
            return Err(EnergyError::AlreadyOpen);
        }
        let (sampler, fell_back) = match &self.config {
            EnergyConfig::Stub { .. } => (None, false),
            EnergyConfig::Sampled { interval_ms } => match open_counter() {
                Ok(counter) => (Some(spawn_sampler(counter, *interval_ms)), false),
                Err(_) => (None, true),
            },
        };
        self.active = Some(ActiveBracket { started: Instant::now(), sampler, fell_back });
        Ok(())
    }

    pub fn stop(&mut self) -> Result<EnergyReport, EnergyError> {
        let bracket = self.active.take().ok_or(EnergyError::NotOpen)?;
        let wall_ms = bracket.started.elapsed().as_millis() as u64;
        match bracket.sampler {
            Some(handle) => {
                handle.stop.store(true, Ordering::Relaxed);
                let (wh, samples) = handle.join.join().unwrap_or((0.0, 0));
                Ok(EnergyReport {
                    method: EnergyMethod::Sampled,
                    total_wh: wh,
                    wall_ms,
                    samples,
                    fell_back: false,
                })
            }
            None => {
                let power_w = match self.config {
                    EnergyConfig::Stub { power_w } => power_w,
                    EnergyConfig::Sampled { .. } => 10.0,
                };
                Ok(EnergyReport {
                    method: EnergyMethod::Stub,
                    total_wh: stub_energy_wh(wall_ms, power_w),
                    wall_ms,
                    samples: 0,
                    fell_back: bracket.fell_back,
                })
            }
        }
    }
}

pub fn stub_energy_wh(wall_ms: u64, power_w: f64) -> f64 {
    wall_ms as f64 * power_w / 3_600_000.0
}

fn spawn_sampler(mut counter: Box<dyn EnergyCounter>, interval_ms: u64) -> SamplerHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let join = std::thread::spawn(move || {
        let mut last = match counter.read_uj() {
            Ok(v) => v,
            Err(_) => return (0.0, 0),
        };
        let range = counter.max_range_uj();
        let mut total_uj: u64 = 0;
        let mut samples: u64 = 1;
        let interval = std::time::Duration::from_millis(interval_ms.max(1));
        loop {
            std::thread::sleep(interval);
            if let Ok(now) = counter.read_uj() {
                let delta = if now >= last {
                    now - last
                } else {
                    // counter wrapped
                    range.map(|r| r - last + now).unwrap_or(0)
                };
                total_uj += delta;
                last = now;
                samples += 1;
            }
            if stop_flag.load(Ordering::Relaxed) {
                break;
            }
        }
        (total_uj as f64 / 3.6e9, samples)
    });
    SamplerHandle { stop, join }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    Probe,
    AttemptStart,
    Request,
    Response,
    Parse,
    Apply,
    Precheck,
    Verify,
    AttemptEnd,
    Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: TraceEventKind,
    pub timestamp_ms: u64,
    pub payload: Value,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace already completed; it is append-only with a single writer")]
    Completed,
}

/// Append-only JSONL writer, one per trajectory. The summary event flushes
/// and seals the file; an i/o failure appends a partial-trace marker before
/// surfacing.
pub struct TraceWriter {
    out: BufWriter<File>,
    seq: u64,
    completed: bool,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        Ok(TraceWriter { out: BufWriter::new(file), seq: 0, completed: false })
    }

    pub fn write(&mut self, kind: TraceEventKind, payload: Value) -> Result<u64, TraceError> {
        if self.completed {
            return Err(TraceError::Completed);
        }
        let event = TraceEvent { seq: self.seq, kind, timestamp_ms: now_ms(), payload };
        let line = serde_json::to_string(&event).expect("trace events are serializable");
        if let Err(e) = writeln!(self.out, "{line}") {
            let _ = writeln!(self.out, r#"{{"partial_trace":true}}"#);
            let _ = self.out.flush();
            self.completed = true;
            return Err(TraceError::Io(e));
        }
        self.seq += 1;
        if kind == TraceEventKind::Summary {
            self.out.flush()?;
            self.completed = true;
        }
        Ok(event.seq)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn pricing_formula() {
        let p = Pricing {
            usd_per_1m_input_tokens: 150.0,
            usd_per_1m_output_tokens: 600.0,
            usd_per_image: 0.0,
        };
        let cost = price_attempt(&Usage { input_tokens: 1_000, output_tokens: 0, images: 0 }, &p);
        assert_eq!(cost.as_usd(), 0.15);
        let zero = price_attempt(&Usage::default(), &p);
        assert_eq!(zero, PicoUsd(0));
    }

    #[test]
    fn pricing_additivity() {
        let p = Pricing {
            usd_per_1m_input_tokens: 100.0,
            usd_per_1m_output_tokens: 400.0,
            usd_per_image: 0.0001,
        };
        let cost = price_attempt(&Usage { input_tokens: 2_000, output_tokens: 500, images: 2 }, &p);
        // 0.2 + 0.2 + 0.0002, exact in pico-USD
        assert_eq!(cost, PicoUsd(400_200_000_000));
        assert!((cost.as_usd() - 0.4002).abs() < 1e-15);
    }

    #[test]
    fn ledger_total_is_exact_sum() {
        let p = Pricing {
            usd_per_1m_input_tokens: 0.075,
            usd_per_1m_output_tokens: 0.3,
            usd_per_image: 0.0,
        };
        let mut ledger = CostLedger::new();
        for i in 0..40 {
            ledger.add(i, &Usage { input_tokens: 13 + i as u64, output_tokens: 7, images: 1 }, &p);
        }
        let manual: i128 = ledger.lines().iter().map(|l| l.pico.0).sum();
        assert_eq!(ledger.total().0, manual);
        let float_sum: f64 = ledger.lines().iter().map(|l| l.usd).sum();
        assert!((ledger.total_usd() - float_sum).abs() < 1e-12);
    }

    #[test]
    fn stub_energy_formula() {
        assert_eq!(stub_energy_wh(3_600_000, 10.0), 10.0);
        assert_eq!(stub_energy_wh(0, 10.0), 0.0);
    }

    #[test]
    fn energy_bracket_discipline() {
        let mut meter = EnergyMeter::new(EnergyConfig::default_stub());
        assert!(meter.stop().is_err());
        meter.start().unwrap();
        assert!(matches!(meter.start(), Err(EnergyError::AlreadyOpen)));
        let report = meter.stop().unwrap();
        assert_eq!(report.method, EnergyMethod::Stub);
        assert_eq!(report.total_wh, stub_energy_wh(report.wall_ms, 10.0));
    }

    #[test]
    fn sampled_falls_back_when_counter_unavailable() {
        let mut meter = EnergyMeter::new(EnergyConfig::Sampled { interval_ms: 5 });
        meter
            .start_with(|| Err(std::io::Error::new(std::io::ErrorKind::NotFound, "no counter")))
            .unwrap();
        let report = meter.stop().unwrap();
        assert_eq!(report.method, EnergyMethod::Stub);
        assert!(report.fell_back);
    }

    #[test]
    fn sampled_counter_integrates() {
        struct Fake(u64);
        impl EnergyCounter for Fake {
            fn read_uj(&mut self) -> std::io::Result<u64> {
                self.0 += 3_600_000; // 1 mWh per read
                Ok(self.0)
            }
        }
        let mut meter = EnergyMeter::new(EnergyConfig::Sampled { interval_ms: 1 });
        meter.start_with(|| Ok(Box::new(Fake(0)))).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(30));
        let report = meter.stop().unwrap();
        assert_eq!(report.method, EnergyMethod::Sampled);
        assert!(report.total_wh > 0.0);
        assert!(report.samples >= 2);
    }

    #[test]
    fn trace_writer_sequences_and_seals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut w = TraceWriter::create(&path).unwrap();
        assert_eq!(w.write(TraceEventKind::Probe, json!({"ok": true})).unwrap(), 0);
        assert_eq!(w.write(TraceEventKind::AttemptStart, json!({"attempt": 0})).unwrap(), 1);
        w.write(TraceEventKind::Summary, json!({"done": true})).unwrap();
        assert!(matches!(
            w.write(TraceEventKind::Probe, json!({})),
            Err(TraceError::Completed)
        ));
        let text = std::fs::read_to_string(&path).unwrap();
        let events: Vec<TraceEvent> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(events.len(), 3);
        assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
        assert_eq!(events[0].payload, json!({"ok": true}));
    }
}
