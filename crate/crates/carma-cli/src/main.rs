//! `carma` command line: scenario replay, sequence evaluation and batch
//! table reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use carma_core::eval::{compute_role_accuracy, compute_tsr, render_table, report_table, RecordingResult};
use carma_core::model::{ReasonerConfig, ReasonerMode};
use carma_core::replay::{
    load_scenario, read_sequence, run_pipeline, write_sequence, BackendChoice, RunConfig,
    ScenarioError,
};
use carma_core::trigger::DebouncePolicy;
use carma_core::vlm::EndpointConfig;

const EXIT_FORMAT_ERROR: u8 = 2;
const EXIT_BACKEND_UNAVAILABLE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "carma", about = "Event-driven actor-action-object grounding engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario through the pipeline and write predictions.
    Run(RunArgs),
    /// Score a prediction file against ground truth.
    Eval(EvalArgs),
    /// Run a manifest of (scenario, mode, backend) rows and aggregate.
    Batch(BatchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    DiscretePrev,
    TriggerPrev,
    Trigger,
    TriggerLabelPrev,
}

impl From<ModeArg> for ReasonerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DiscretePrev => ReasonerMode::DiscretePrev,
            ModeArg::TriggerPrev => ReasonerMode::TriggerPrev,
            ModeArg::Trigger => ReasonerMode::TriggerOnly,
            ModeArg::TriggerLabelPrev => ReasonerMode::TriggerLabelPrev,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    NoisyOracle,
    Vlm,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "trigger")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendArg,
    /// Seed for the noisy oracle's perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability the noisy oracle corrupts the action label.
    #[arg(long, default_value_t = 0.0)]
    flip_prob: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Discrete sampling interval in seconds.
    #[arg(long, default_value_t = 2.0)]
    interval: f64,
    /// Consecutive identical labels required before a trigger.
    #[arg(long, default_value_t = 2)]
    debounce_k: u32,
    #[arg(long, default_value_t = false)]
    include_robot_hand: bool,
    /// Chat completions base URL for the vlm backend.
    #[arg(long, default_value = "http://localhost:8080/v1")]
    base_url: String,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also print an aggregate table for this single pair.
    #[arg(long, default_value_t = false)]
    table: bool,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_config(args: &RunArgs) -> RunConfig {
    let backend = match args.backend {
        BackendArg::Oracle => BackendChoice::Oracle,
        BackendArg::NoisyOracle => {
            BackendChoice::NoisyOracle { seed: args.seed, flip_prob: args.flip_prob }
        }
        BackendArg::Vlm => {
            BackendChoice::Vlm(EndpointConfig::new(args.base_url.clone(), args.model.clone()))
        }
    };
    RunConfig {
        reasoner: ReasonerConfig {
            mode: args.mode.into(),
            sample_interval: args.interval,
            include_robot_hand: args.include_robot_hand,
        },
        backend,
        debounce: DebouncePolicy { k: args.debounce_k },
        ..Default::default()
    }
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<u8> {
    let scenario = match load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e @ (ScenarioError::FormatError { .. } | ScenarioError::MissingFile(_))) => {
            eprintln!("error: {e}");
            return Ok(EXIT_FORMAT_ERROR);
        }
        Err(e) => return Err(e.into()),
    };
    let config = run_config(args);
    let (mem, seq, report) = run_pipeline(&scenario, &config)?;

    std::fs::create_dir_all(&args.out)?;
    write_sequence(&args.out.join("predicted.seq"), &seq)?;
    mem.persist(&args.out.join("memory.carma-mem"))?;
    std::fs::write(&args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;

    println!(
        "{}: {} triggers, {} cycles, {} predictions, {} grounding errors, {} backend errors",
        seq.recording,
        report.trigger_count,
        report.cycle_count,
        report.prediction_count,
        report.grounding_errors.len(),
        report.backend_errors.len(),
    );
    if report.prediction_count == 0 && !report.backend_errors.is_empty() {
        return Ok(EXIT_BACKEND_UNAVAILABLE);
    }
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<u8> {
    let (pred, gt) = match (read_sequence(&args.pred), read_sequence(&args.gt)) {
        (Ok(p), Ok(g)) => (p, g),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return Ok(EXIT_FORMAT_ERROR);
        }
    };
    let tsr = compute_tsr(&gt, &pred);
    let roles = compute_role_accuracy(&gt, &pred);
    println!(
        "tsr {:.4} (matched {}/{}, {} insertions); action_acc {:.4}; object_acc {:.4}",
        tsr.tsr, tsr.matched, tsr.gt_len, tsr.insertions, roles.action_acc, roles.object_acc
    );
    if args.table {
        let result = RecordingResult {
            recording: gt.recording.clone(),
            scenario: gt.scenario,
            setting: gt.setting,
            mode: ReasonerMode::TriggerOnly,
            tsr: tsr.clone(),
            roles: roles.clone(),
        };
        print!("{}", render_table(&report_table(&[result])));
    }
    Ok(0)
}

#[derive(serde::Deserialize)]
struct ManifestRow {
    scenario: String,
    gt: String,
    mode: ReasonerMode,
    backend: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    flip_prob: f64,
}

fn cmd_batch(args: &BatchArgs) -> anyhow::Result<u8> {
    let text = std::fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let row: ManifestRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: manifest line {}: {e}", i + 1);
                return Ok(EXIT_FORMAT_ERROR);
            }
        };
        let backend = match row.backend.as_str() {
            "oracle" => BackendChoice::Oracle,
            "noisy_oracle" | "noisy-oracle" => {
                BackendChoice::NoisyOracle { seed: row.seed, flip_prob: row.flip_prob }
            }
            other => {
                eprintln!("error: manifest line {}: unsupported backend {other:?}", i + 1);
                return Ok(EXIT_FORMAT_ERROR);
            }
        };
        let scenario = match load_scenario(&base.join(&row.scenario)) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(EXIT_FORMAT_ERROR);
            }
        };
        let config = RunConfig {
            reasoner: ReasonerConfig {
                mode: row.mode,
                ..Default::default()
            },
            backend,
            ..Default::default()
        };
        let (_, pred, _) = run_pipeline(&scenario, &config)?;
        let gt = match read_sequence(&base.join(&row.gt)) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(EXIT_FORMAT_ERROR);
            }
        };
        results.push(RecordingResult {
            recording: gt.recording.clone(),
            scenario: gt.scenario,
            setting: gt.setting,
            mode: row.mode,
            tsr: compute_tsr(&gt, &pred),
            roles: compute_role_accuracy(&gt, &pred),
        });
    }
    let report = report_table(&results);
    print!("{}", render_table(&report));
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Batch(args) => cmd_batch(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
