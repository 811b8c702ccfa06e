use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use osc_lab::config::{self, ExperimentConfig, SweepConfig, Width};
use osc_lab::error::{LabError, Result};
use osc_lab::harness;
use osc_lab::record::{write_csv, MetricRow};
use osc_lab::toy::{run_toy, ToyConfig};

#[derive(Parser)]
#[command(name = "osclab", version, about = "Quantization-aware training and weight-oscillation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a toy-model trajectory.
    Toy(ToyArgs),
    /// Train one configuration and evaluate it across widths.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint across widths.
    Crossbit(CrossbitArgs),
    /// Run a config × seed matrix and aggregate it.
    Sweep(SweepArgs),
    /// Aggregate the run directories of an existing sweep.
    Report(SweepArgs),
}

#[derive(Args)]
struct ToyArgs {
    /// JSON toy config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["one_weight", "two_weight"])]
    model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    w2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tail: Option<usize>,
    /// Trajectory CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `runs/<id>/seed-<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, value_parser = ["baseline", "qat", "osc_reg"])]
    regime: Option<String>,
    /// Target width: ternary or a bit count.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale_frozen: Option<bool>,
    #[arg(long)]
    tracking_bits: Option<String>,
    #[arg(long, value_parser = ["bin_index", "value"])]
    tracking_mode: Option<String>,
    #[arg(long, value_parser = ["epoch", "step"])]
    cadence: Option<String>,
    /// Comma-separated evaluation widths, e.g. `ternary,3,4,8,fp32`.
    #[arg(long, value_delimiter = ',')]
    eval_widths: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    oscillation_log_layers: Option<Vec<usize>>,
    #[arg(long)]
    oscillation_log_every: Option<usize>,
    /// Generic override `key=value`; dotted keys reach nested objects
    /// (`model.hidden=128`, `dataset.spread=2.0`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CrossbitArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run record or experiment config naming the dataset.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<String>>,
    /// Metrics CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0: one per core); overrides the config.
    #[arg(long)]
    threads: Option<usize>,
}

fn base_dir(path: Option<&Path>) -> PathBuf {
    path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default()
}

fn load_or_empty(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => config::read_json(p),
        None => Ok(json!({ "schema_version": config::SCHEMA_VERSION })),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn toy(a: ToyArgs) -> Result<()> {
    let mut v = load_or_empty(a.config.as_deref())?;
    let mut o: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, val: Option<Value>| {
        if let Some(val) = val {
            o.push((k.to_string(), val));
        }
    };
    put("model", a.model.map(Value::from));
    put("w", a.w.map(Value::from));
    put("w2", a.w2.map(Value::from));
    put("x", a.x.map(Value::from));
    put("y", a.y.map(Value::from));
    put("scale", a.scale.map(Value::from));
    put("lr", a.lr.map(Value::from));
    put("steps", a.steps.map(Value::from));
    put("tail", a.tail.map(Value::from));
    config::apply_overrides(&mut v, &o)?;
    let cfg = ToyConfig::from_value(&v)?;
    print_json(&run_toy(&cfg, a.out.as_deref())?)
}

fn train_overrides(a: &TrainArgs) -> Result<Vec<(String, Value)>> {
    let mut o: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, val: Option<Value>| {
        if let Some(val) = val {
            o.push((k.to_string(), val));
        }
    };
    let width = |s: &Option<String>| s.as_deref().map(config::parse_override_value);
    put("id", a.id.clone().map(Value::from));
    put("regime", a.regime.clone().map(Value::from));
    put("bits", width(&a.bits));
    put("lambda", a.lambda.map(Value::from));
    put("lr", a.lr.map(Value::from));
    put("max_epochs", a.max_epochs.map(Value::from));
    put("patience", a.patience.map(Value::from));
    put("batch_size", a.batch_size.map(Value::from));
    put("seed", a.seed.map(Value::from));
    put("scale_frozen", a.scale_frozen.map(Value::from));
    put("tracking_bits", width(&a.tracking_bits));
    put("tracking_mode", a.tracking_mode.clone().map(Value::from));
    put("cadence", a.cadence.clone().map(Value::from));
    put("eval_widths", a.eval_widths.as_ref().map(|ws| ws.iter().map(|w| config::parse_override_value(w)).collect()));
    put("oscillation_log_layers", a.oscillation_log_layers.as_ref().map(|l| json!(l)));
    put("oscillation_log_every", a.oscillation_log_every.map(Value::from));
    let mut errors = Vec::new();
    for s in &a.set {
        match s.split_once('=') {
            Some((k, v)) if !k.is_empty() => o.push((k.to_string(), config::parse_override_value(v))),
            _ => errors.push(format!("--set {s:?}: expected KEY=VALUE")),
        }
    }
    if !errors.is_empty() {
        return Err(LabError::Config(errors));
    }
    Ok(o)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut v = load_or_empty(a.config.as_deref())?;
    config::apply_overrides(&mut v, &train_overrides(&a)?)?;
    let cfg = ExperimentConfig::from_value(&v)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| harness::run_dir(Path::new("runs"), &cfg.id, cfg.seed));
    let run = harness::run_experiment(&cfg, &base_dir(a.config.as_deref()), &out)?;
    let r = &run.record;
    print_json(&json!({
        "config_id": r.config.id,
        "seed": r.config.seed,
        "out": out,
        "epochs": r.epochs.epoch.len(),
        "best_epoch": r.best_epoch,
        "test_acc_fp": r.test_acc_fp,
        "test_acc_target": r.test_acc_target,
        "cross_bit": r.cross_bit,
        "oscillation": r.oscillation,
    }))
}

fn crossbit(a: CrossbitArgs) -> Result<()> {
    let v = config::read_json(&a.config)?;
    // Accept either a run record or a plain experiment config.
    let cfg = match v.get("config") {
        Some(inner) if v.get("cross_bit").is_some() => ExperimentConfig::from_value(inner)?,
        _ => ExperimentConfig::from_value(&v)?,
    };
    let widths = match &a.widths {
        Some(ws) => {
            let mut out = Vec::new();
            let mut errors = Vec::new();
            for w in ws {
                match w.parse::<Width>() {
                    Ok(w) => out.push(w.0),
                    Err(e) => errors.push(format!("widths: {e}")),
                }
            }
            if !errors.is_empty() {
                return Err(LabError::Config(errors));
            }
            out
        }
        None => cfg.eval_widths(),
    };
    let data = harness::load_dataset(&cfg.dataset, &base_dir(Some(&a.config)))?;
    let cells = harness::crossbit_checkpoint(&a.checkpoint, &data, &widths)?;
    if let Some(out) = &a.out {
        let rows: Vec<MetricRow> = cells
            .iter()
            .map(|c| MetricRow {
                config_id: cfg.id.clone(),
                seed: cfg.seed,
                eval_width: c.eval_width.clone(),
                accuracy: c.accuracy,
            })
            .collect();
        write_csv(out, &rows)?;
    }
    print_json(&cells)
}

fn sweep(a: SweepArgs, run: bool) -> Result<()> {
    let mut s = SweepConfig::load(&a.config)?;
    if let Some(t) = a.threads {
        s.threads = t;
    }
    let report = if run {
        harness::sweep(&s, &base_dir(Some(&a.config)), &a.out)?
    } else {
        harness::report(&s, &a.out)?
    };
    print_json(&report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Toy(a) => toy(a),
        Command::Train(a) => train(a),
        Command::Crossbit(a) => crossbit(a),
        Command::Sweep(a) => sweep(a, true),
        Command::Report(a) => sweep(a, false),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("osclab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
