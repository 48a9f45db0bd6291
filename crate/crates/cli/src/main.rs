//! `dalight`: synthesize phantoms, count parameters, train, evaluate,
//! check gradients and run the ablation sweep.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dalight::checks::{gradient_suite, model_gradcheck, CheckEntry, GRAD_TOL};
use dalight::data::{case_path, generate_phantom, list_cases, phantom_rng, read_case_with, write_case, PreparedCase};
use dalight::metrics::dice_per_million;
use dalight::model::{Ablation, DALightModel, ModelConfig};
use dalight::train::{
    evaluate_cases, history_csv, load_checkpoint, save_checkpoint, save_weights, train, TrainConfig, TrainState,
};
use dalight::Error;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "dalight", version, about = "Lightweight 3D tumor segmentation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write deterministic phantom cases and a manifest.
    Synth(Common),
    /// Print the parameter report of one variant.
    Params(Common),
    /// Train on the cases under --data.
    Train(Common),
    /// Evaluate a checkpoint (or a fresh model) on whole cases.
    Eval(Common),
    /// Finite-difference check of every primitive and block.
    Gradcheck(Common),
    /// Train and score all five variants under one budget.
    Ablate(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// full, no_sepconv, no_scanner_norm, no_csa or no_ssfb.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    /// synth: number of cases.
    #[arg(long)]
    cases: Option<usize>,
    /// synth: cubic extent of each case.
    #[arg(long)]
    extent: Option<usize>,
    /// eval: checkpoint to score; a freshly initialized model when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// train: continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// gradcheck: random instances per entry.
    #[arg(long)]
    instances: Option<usize>,
    /// gradcheck: also check the whole model end to end.
    #[arg(long)]
    whole_model: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    cases: usize,
    extent: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { cases: 4, extent: [32; 3] }
    }
}

/// Everything a command reads; written next to its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    command: String,
    seed: u64,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    model: ModelConfig,
    train: TrainConfig,
    synth: SynthConfig,
    /// Share of cases held out for validation (at least one).
    val_fraction: f64,
    checkpoint: Option<PathBuf>,
    resume: Option<PathBuf>,
    gradcheck_instances: usize,
    gradcheck_whole_model: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            data: None,
            out: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            val_fraction: 0.25,
            checkpoint: None,
            resume: None,
            gradcheck_instances: 5,
            gradcheck_whole_model: false,
        }
    }
}

enum Failure {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFinite(_) | Error::NonFiniteLoss { .. } => Failure::Numeric(msg),
            Error::MissingFile(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::DimensionOverflow(_)
            | Error::Malformed(_)
            | Error::Io(_) => Failure::Io(msg),
            Error::Json(_) => Failure::Validation(msg),
            _ => Failure::Validation(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn effective_config(command: &str, c: &Common) -> Outcome<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_at(path))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    if let Some(v) = &c.variant {
        cfg.model.ablation = Ablation::parse(v)?;
    }
    if c.data.is_some() {
        cfg.data = c.data.clone();
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(p) = c.patch {
        cfg.train.patch = p;
    }
    if let Some(n) = c.cases {
        cfg.synth.cases = n;
    }
    if let Some(n) = c.extent {
        cfg.synth.extent = [n; 3];
    }
    if c.checkpoint.is_some() {
        cfg.checkpoint = c.checkpoint.clone();
    }
    if c.resume.is_some() {
        cfg.resume = c.resume.clone();
    }
    if let Some(n) = c.instances {
        cfg.gradcheck_instances = n;
    }
    cfg.gradcheck_whole_model |= c.whole_model;

    let mut problems: Vec<String> = cfg.model.problems().into_iter().map(|p| format!("model: {p}")).collect();
    problems.extend(cfg.train.problems().into_iter().map(|p| format!("train: {p}")));
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        problems.push(format!("val_fraction: {} outside [0, 1)", cfg.val_fraction));
    }
    if cfg.gradcheck_instances == 0 {
        problems.push("gradcheck_instances: must be positive".into());
    }
    if !problems.is_empty() {
        return Err(Failure::Validation(format!("invalid configuration:\n  {}", problems.join("\n  "))));
    }
    Ok(cfg)
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
    v.as_deref().ok_or_else(|| Failure::Validation(format!("--{flag} is required")))
}

fn prepare_out(cfg: &RunConfig) -> Outcome<PathBuf> {
    let out = require(&cfg.out, "out")?.to_path_buf();
    fs::create_dir_all(&out).map_err(io_at(&out))?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_at(path))
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    fs::write(path, text).map_err(io_at(path))
}

#[derive(Serialize)]
struct ManifestEntry {
    id: String,
    bucket: usize,
    file: String,
    class_counts: [usize; 4],
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    extent: [usize; 3],
    cases: Vec<ManifestEntry>,
}

fn cmd_synth(cfg: &RunConfig) -> Outcome<()> {
    let out = prepare_out(cfg)?;
    let mut cases = Vec::new();
    for i in 0..cfg.synth.cases {
        let id = format!("case_{i:03}");
        let rec = generate_phantom(
            &mut phantom_rng(cfg.seed, &id),
            cfg.synth.extent,
            &id,
            cfg.model.num_modalities,
            cfg.model.num_buckets,
        )?;
        let path = case_path(&out, &id);
        write_case(&path, &rec)?;
        cases.push(ManifestEntry {
            bucket: rec.bucket,
            file: path.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_string(),
            class_counts: rec.class_counts(),
            id,
        });
    }
    println!("wrote {} cases to {}", cases.len(), out.display());
    write_json(&out.join("manifest.json"), &Manifest { seed: cfg.seed, extent: cfg.synth.extent, cases })
}

#[derive(Serialize)]
struct ParamsOutput {
    #[serde(flatten)]
    report: dalight::model::ParamReport,
    conv_comparison: Vec<dalight::model::ConvComparison>,
}

fn cmd_params(cfg: &RunConfig) -> Outcome<()> {
    let model = DALightModel::new(cfg.model.clone(), cfg.seed)?;
    let report = ParamsOutput { report: model.count_params(), conv_comparison: model.conv_comparison() };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Validation(e.to_string()))?;
    // a closed pipe downstream is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
    if cfg.out.is_some() {
        let out = prepare_out(cfg)?;
        write_json(&out.join("params.json"), &report)?;
    }
    Ok(())
}

/// Loads every case under the data root, sorted by id.
fn load_cases(cfg: &RunConfig) -> Outcome<Vec<PreparedCase>> {
    let root = require(&cfg.data, "data")?;
    let ids = list_cases(root)?;
    if ids.is_empty() {
        return Err(Failure::Io(format!("no .dl3d cases under {}", root.display())));
    }
    let mut cases = Vec::with_capacity(ids.len());
    for id in ids {
        let rec = read_case_with(&case_path(root, &id), cfg.model.num_buckets)?;
        if rec.modalities() != cfg.model.num_modalities {
            return Err(Failure::Validation(format!(
                "case {id} has {} modalities, model expects {}",
                rec.modalities(),
                cfg.model.num_modalities
            )));
        }
        cases.push(PreparedCase::new(&rec));
    }
    Ok(cases)
}

/// Trailing cases are held out; a single case serves both roles.
fn split(cases: &[PreparedCase], fraction: f64) -> (&[PreparedCase], &[PreparedCase]) {
    if cases.len() == 1 {
        return (cases, cases);
    }
    let held = ((cases.len() as f64 * fraction).ceil() as usize).clamp(1, cases.len() - 1);
    cases.split_at(cases.len() - held)
}

fn cmd_train(cfg: &RunConfig) -> Outcome<()> {
    let cases = load_cases(cfg)?;
    let out = prepare_out(cfg)?;
    let (train_cases, val_cases) = split(&cases, cfg.val_fraction);
    let (mut model, mut state) = match &cfg.resume {
        Some(path) => {
            let (model, state, meta) = load_checkpoint(path)?;
            if meta.model != cfg.model {
                return Err(Failure::Validation(format!("{} was trained with a different model config", path.display())));
            }
            (model, state)
        }
        None => (DALightModel::new(cfg.model.clone(), cfg.seed)?, TrainState::default()),
    };
    println!(
        "training {} on {} cases, validating on {}",
        cfg.model.ablation,
        train_cases.len(),
        val_cases.len()
    );
    train(&mut model, &mut state, train_cases, val_cases, &cfg.train, |r| {
        let val = r.val_dice.map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
        println!("epoch {:>3}  loss {:.5}  val dice {val}", r.epoch, r.train_loss);
    })?;
    write_text(&out.join("history.csv"), &history_csv(&state.steps))?;
    save_checkpoint(&out.join("final.ckpt"), &model, cfg.seed, &state, Some(&cfg.train))?;
    let best = out.join("best.ckpt");
    match &state.best {
        Some(b) => {
            let mut best_model = model.clone();
            dalight::train::apply_snapshot(&mut best_model, &b.weights)?;
            save_weights(&best, &best_model, cfg.seed, Some(&cfg.train))?;
            println!("best validation dice {:.4} at epoch {}", b.val_dice, b.epoch);
        }
        None => {
            save_weights(&best, &model, cfg.seed, Some(&cfg.train))?;
            println!("validation dice never defined; best.ckpt holds the final weights");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsOutput {
    variant: String,
    params: usize,
    cases: usize,
    accuracy: Option<f64>,
    mean_tumor_dice: Option<f64>,
    dice_per_million: Option<f64>,
    metrics: dalight::metrics::ClassMetrics,
}

fn cmd_eval(cfg: &RunConfig) -> Outcome<()> {
    let cases = load_cases(cfg)?;
    let model = match &cfg.checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => DALightModel::new(cfg.model.clone(), cfg.seed)?,
    };
    let out = prepare_out(cfg)?;
    let ev = evaluate_cases(&model, &cases)?;
    let params = model.count_params().total;
    let dice = ev.mean_tumor_dice();
    let dpm = dice.map(|d| dice_per_million(d, params)).transpose()?;
    let report = MetricsOutput {
        variant: model.config().ablation.name().to_string(),
        params,
        cases: cases.len(),
        accuracy: ev.confusion.accuracy(),
        mean_tumor_dice: dice,
        dice_per_million: dpm,
        metrics: ev.metrics.clone(),
    };
    write_json(&out.join("metrics.json"), &report)?;
    write_text(&out.join("confusion.csv"), &ev.confusion.to_csv())?;
    write_json(&out.join("calibration.json"), &ev.calibration)?;
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    println!("mean tumor dice {}  ece {:.4}  dice/M {}", show(dice), ev.calibration.ece, show(dpm));
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Outcome<()> {
    let mut entries = gradient_suite(cfg.gradcheck_instances, cfg.seed)?;
    if cfg.gradcheck_whole_model {
        let r = model_gradcheck(cfg.seed)?;
        entries.push(CheckEntry {
            name: "whole_model",
            instances: 1,
            checked: r.checked,
            passed: r.max_rel_error <= GRAD_TOL,
            max_rel_error: r.max_rel_error,
            worst: r.worst,
        });
    }
    println!("{:<24} {:>8} {:>12}  result", "entry", "checked", "max rel err");
    for e in &entries {
        let verdict = if e.passed { "pass" } else { "FAIL" };
        println!("{:<24} {:>8} {:>12.3e}  {verdict}", e.name, e.checked, e.max_rel_error);
    }
    if cfg.out.is_some() {
        let out = prepare_out(cfg)?;
        write_json(&out.join("gradcheck.json"), &entries)?;
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn cmd_ablate(cfg: &RunConfig) -> Outcome<()> {
    let cases = load_cases(cfg)?;
    let out = prepare_out(cfg)?;
    let (train_cases, val_cases) = split(&cases, cfg.val_fraction);
    let mut csv = String::from("variant,mean_tumor_dice,params\n");
    for ablation in Ablation::ALL {
        let mut model = DALightModel::new(cfg.model.clone().with_ablation(ablation), cfg.seed)?;
        let mut state = TrainState::default();
        train(&mut model, &mut state, train_cases, val_cases, &cfg.train, |_| {})?;
        let dice = evaluate_cases(&model, val_cases)?.mean_tumor_dice();
        let params = model.count_params().total;
        let shown = dice.map_or_else(String::new, |d| format!("{d:.6}"));
        println!("{:<16} dice {:>9}  params {params}", ablation.name(), if shown.is_empty() { "undefined" } else { &shown });
        csv.push_str(&format!("{},{shown},{params}\n", ablation.name()));
    }
    write_text(&out.join("ablation.csv"), &csv)
}

fn run(cli: Cli) -> Outcome<()> {
    let (name, common, f): (&str, &Common, fn(&RunConfig) -> Outcome<()>) = match &cli.command {
        Command::Synth(c) => ("synth", c, cmd_synth),
        Command::Params(c) => ("params", c, cmd_params),
        Command::Train(c) => ("train", c, cmd_train),
        Command::Eval(c) => ("eval", c, cmd_eval),
        Command::Gradcheck(c) => ("gradcheck", c, cmd_gradcheck),
        Command::Ablate(c) => ("ablate", c, cmd_ablate),
    };
    let cfg = effective_config(name, common)?;
    f(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
