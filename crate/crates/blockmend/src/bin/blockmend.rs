//! Thin command-line front end over the blockmend library.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use blockmend::accounting::Pricing;
use blockmend::aggregate;
use blockmend::controller::{ControllerConfig, ControllerMode};
use blockmend::matrix::{self, RunConfigFile, RunMatrixSpec};
use blockmend::trajectory::{run_trajectory, RepairCase};

#[derive(Parser)]
#[command(name = "blockmend", version, about = "Probe, patch, verify, and account for block-language repairs")]
struct Cli {
    /// Run configuration (endpoints, controller, defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pricing table: model_id -> price card; overrides endpoint pricing.
    #[arg(long, global = true)]
    pricing: Option<PathBuf>,
    /// Directory of case fixtures (or a single case directory for `case`).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Run output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Restrict to one or more controller modes.
    #[arg(long, global = true)]
    mode: Vec<String>,
    /// Restrict to one or more model ids.
    #[arg(long, global = true)]
    model: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the full (models x modes x cases) matrix.
    Run,
    /// Run a single case and print its trajectory record.
    Case,
    /// Compute per-mode summaries (writes summary.json / summary.csv).
    Aggregate,
    /// Image-use and strict-verification audit, plus failure layers.
    Audit,
    /// Per-model deltas of a treatment mode against a baseline.
    Deltas {
        #[arg(long, default_value = "heuristic")]
        treatment: String,
        #[arg(long, default_value = "always_on")]
        baseline: String,
    },
    /// Check matrix completeness over an output directory.
    Validate,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Case => cmd_case(&cli),
        Command::Aggregate => cmd_aggregate(&cli),
        Command::Audit => cmd_audit(&cli),
        Command::Deltas { treatment, baseline } => cmd_deltas(&cli, treatment, baseline),
        Command::Validate => cmd_validate(&cli),
    }
}

fn parse_mode(s: &str) -> Result<ControllerMode> {
    ControllerMode::parse(s).with_context(|| {
        format!("unknown mode {s:?} (expected text_only, always_on, fixed, heuristic)")
    })
}

fn load_config(cli: &Cli) -> Result<RunConfigFile> {
    let path = cli.config.as_ref().context("--config is required")?;
    Ok(RunConfigFile::load(path)?)
}

fn load_pricing(cli: &Cli) -> Result<Option<BTreeMap<String, Pricing>>> {
    match &cli.pricing {
        None => Ok(None),
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {path:?}"))?;
            Ok(Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing {path:?}"))?))
        }
    }
}

fn case_dirs(root: &PathBuf) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("reading fixtures dir {root:?}"))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no case directories under {root:?}");
    }
    Ok(dirs)
}

fn build_spec(cli: &Cli) -> Result<RunMatrixSpec> {
    let config = load_config(cli)?;
    let pricing = load_pricing(cli)?;
    let mut endpoints = config.endpoints.clone();
    if let Some(table) = &pricing {
        for e in &mut endpoints {
            if let Some(p) = table.get(&e.model_id) {
                e.pricing = *p;
            }
        }
    }
    if !cli.model.is_empty() {
        endpoints.retain(|e| cli.model.contains(&e.model_id));
        if endpoints.is_empty() {
            bail!("--model filters removed every endpoint");
        }
    }
    let mut modes = config.modes.unwrap_or_else(|| ControllerMode::ALL.to_vec());
    if !cli.mode.is_empty() {
        let wanted: Vec<ControllerMode> =
            cli.mode.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?;
        modes.retain(|m| wanted.contains(m));
        if modes.is_empty() {
            bail!("--mode filters removed every mode");
        }
    }
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let controller = config
        .controller
        .unwrap_or_else(|| ControllerConfig::default_with_seed(ControllerMode::Heuristic, seed));
    let fixtures = cli.fixtures.clone().context("--fixtures is required")?;
    Ok(RunMatrixSpec {
        endpoints,
        modes,
        cases: case_dirs(&fixtures)?,
        seed,
        output_dir: cli.out.clone().context("--out is required")?,
        parallelism: cli.parallelism.or(config.parallelism).unwrap_or(1),
        controller,
    })
}

fn cmd_run(cli: &Cli) -> Result<()> {
    let spec = build_spec(cli)?;
    let run = matrix::run_matrix(&spec)?;
    println!(
        "matrix complete: {} records ({} executed, {} resumed) under {:?}",
        run.records.len(),
        run.executed,
        run.skipped,
        spec.output_dir
    );
    let report = matrix::validate_matrix(&run.records, &spec);
    println!("completeness: {}", if report.pass { "pass" } else { "FAIL" });
    println!("{}", aggregate::render_mode_table(&aggregate::aggregate_modes(&run.records)));
    Ok(())
}

fn cmd_case(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let fixtures = cli.fixtures.clone().context("--fixtures is required (a case directory)")?;
    let case = RepairCase::load(&fixtures)?;
    let model = cli.model.first().context("--model picks the endpoint")?;
    let mut endpoint = config
        .endpoints
        .iter()
        .find(|e| &e.model_id == model)
        .with_context(|| format!("model {model:?} not in config"))?
        .clone();
    if let Some(table) = load_pricing(cli)? {
        if let Some(p) = table.get(&endpoint.model_id) {
            endpoint.pricing = *p;
        }
    }
    let mode = parse_mode(cli.mode.first().map(String::as_str).unwrap_or("heuristic"))?;
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let mut controller = config
        .controller
        .unwrap_or_else(|| ControllerConfig::default_with_seed(mode, seed));
    controller.mode = mode;
    let out = cli.out.clone().context("--out is required")?;
    let dir = matrix::trajectory_dir(&out, &endpoint.model_id, mode, &case.case_id);
    let record = run_trajectory(&case, &endpoint, &controller, seed, &dir)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn load_out_records(cli: &Cli) -> Result<Vec<blockmend::TrajectoryRecord>> {
    let out = cli.out.clone().context("--out is required")?;
    let records = matrix::load_records(&out)?;
    if records.is_empty() {
        bail!("no record.json files under {out:?}");
    }
    Ok(records)
}

fn cmd_aggregate(cli: &Cli) -> Result<()> {
    let records = load_out_records(cli)?;
    let summaries = aggregate::aggregate_modes(&records);
    print!("{}", aggregate::render_mode_table(&summaries));
    let out = cli.out.clone().context("--out is required")?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_vec_pretty(&aggregate::summary_json(&records))?,
    )?;
    std::fs::write(out.join("summary.csv"), aggregate::summary_csv(&summaries))?;
    println!("\nwrote summary.json and summary.csv under {out:?}");
    Ok(())
}

fn cmd_audit(cli: &Cli) -> Result<()> {
    let records = load_out_records(cli)?;
    print!("{}", aggregate::render_audit_table(&aggregate::image_audit(&records)));
    println!();
    print!("{}", aggregate::render_failure_table(&aggregate::failure_layers(&records)));
    Ok(())
}

fn cmd_deltas(cli: &Cli, treatment: &str, baseline: &str) -> Result<()> {
    let records = load_out_records(cli)?;
    let deltas = aggregate::pairwise_deltas(&records, parse_mode(treatment)?, parse_mode(baseline)?)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    print!("{}", aggregate::render_delta_table(&deltas));
    Ok(())
}

fn cmd_validate(cli: &Cli) -> Result<()> {
    let spec = build_spec(cli)?;
    let records = matrix::load_records(&spec.output_dir)?;
    let report = matrix::validate_matrix(&records, &spec);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.pass {
        bail!("matrix incomplete");
    }
    Ok(())
}
