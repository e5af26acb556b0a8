//! The four workflows and their output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use tramsurv::fit::{
    deserialize_ensemble, fit_members, fit_split, select_top, serialize_ensemble, split_indices,
    TrainingLog,
};
use tramsurv::{
    evaluate, fit_scaler, generate_semisynthetic, serialize_model, validate_dataset,
    ConditionalModel, EnsembleModel, FittedModel, SurvivalDataset, SurvivalPrediction, SynthConfig,
    ValidationMode,
};

use crate::config::SpecConfig;
use crate::csv_io::{parse_dataset_csv, write_dataset_csv};
use crate::error::{CliError, CliResult};

/// Number of time points per subject in the CDF grid export.
pub const CDF_GRID_POINTS: usize = 200;

#[derive(Debug, Parser)]
#[command(
    name = "tramsurv",
    version,
    about = "Transformation models for survival data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model; writes model.json, training_log.csv and the split.
    Fit(FitArgs),
    /// Score a model or ensemble on a dataset.
    Evaluate(EvaluateArgs),
    /// Draw a semi-synthetic dataset from a model.
    Sample(SampleArgs),
    /// Train bootstrap members and keep the best ones.
    Ensemble(EnsembleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with model and training keys
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: SpecConfig,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Single-model or ensemble JSON artifact
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub replication: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Censor draws above the largest observed time at that time
    #[arg(long = "censor_at_max", default_value_t = true, action = clap::ArgAction::Set)]
    pub censor_at_max: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of bootstrap members B
    #[arg(long)]
    pub members: usize,
    /// Number of members kept M
    #[arg(long)]
    pub top: usize,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: SpecConfig,
}

impl Command {
    pub fn out_dir(&self) -> &Path {
        match self {
            Command::Fit(a) => &a.out,
            Command::Evaluate(a) => &a.out,
            Command::Sample(a) => &a.out,
            Command::Ensemble(a) => &a.out,
        }
    }
}

pub fn run(command: &Command) -> CliResult<()> {
    let out = command.out_dir();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match command {
        Command::Fit(args) => run_fit(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sample(args) => run_sample(args),
        Command::Ensemble(args) => run_ensemble(args),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(path, e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_bytes(path, text.as_bytes())
}

fn load_config(spec: &Option<PathBuf>, overrides: &SpecConfig) -> CliResult<SpecConfig> {
    let file = match spec {
        Some(path) => SpecConfig::from_toml_file(path)?,
        None => SpecConfig::default(),
    };
    Ok(file.merged(overrides))
}

fn load_fitting_data(path: &Path) -> CliResult<SurvivalDataset> {
    let raw = parse_dataset_csv(path)?;
    Ok(validate_dataset(raw, ValidationMode::Fitting)?)
}

fn training_log_csv(log: &TrainingLog) -> String {
    let mut s = String::from("epoch,train_nll,val_nll,grad_norm,clipped\n");
    for r in &log.epochs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_nll, r.val_nll, r.grad_norm, r.clipped
        ));
    }
    s
}

fn run_fit(args: &FitArgs) -> CliResult<()> {
    let dataset = load_fitting_data(&args.data)?;
    let config = load_config(&args.spec, &args.overrides)?;
    let (spec, train_config) = config.resolve(dataset.n_features())?;
    let scaler = fit_scaler(&dataset, train_config.scaler_margin)?;
    let (train_idx, val_idx) =
        split_indices(dataset.len(), train_config.validation_fraction, spec.seed);
    let train = dataset.subset(&train_idx);
    let validation = dataset.subset(&val_idx);
    let (model, log) = fit_split(&train, &validation, &spec, &train_config, scaler)?;

    let out = &args.out;
    write_bytes(&out.join("model.json"), &serialize_model(&model)?)?;
    write_text(&out.join("training_log.csv"), &training_log_csv(&log))?;
    write_dataset_csv(&out.join("train.csv"), &train)?;
    write_dataset_csv(&out.join("validation.csv"), &validation)?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "fit",
            "version": env!("CARGO_PKG_VERSION"),
            "data": args.data,
            "spec_file": args.spec,
            "n_subjects": dataset.len(),
            "spec": spec,
            "train_config": train_config,
            "seed": spec.seed,
            "best_epoch": log.best_epoch,
            "degenerate_intervals": log.degenerate_intervals,
            "outputs": ["model.json", "training_log.csv", "train.csv", "validation.csv"],
        }),
    )
}

/// A model artifact of either kind.
pub enum LoadedModel {
    Single(FittedModel),
    Ensemble(EnsembleModel),
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    if !path.is_file() {
        return Err(CliError::ModelNotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let is_ensemble = serde_json::from_slice::<Value>(&bytes)
        .map(|v| v.get("members").is_some())
        .unwrap_or(false);
    Ok(if is_ensemble {
        LoadedModel::Ensemble(deserialize_ensemble(&bytes)?)
    } else {
        LoadedModel::Single(tramsurv::deserialize_model(&bytes)?)
    })
}

/// `n` log-spaced times spanning `[exp(a_lo), exp(b_hi)]`.
pub fn cdf_grid_times<M: ConditionalModel>(model: &M, n: usize) -> Vec<f64> {
    let s = model.scaler();
    (0..n)
        .map(|i| (s.a_lo + (s.b_hi - s.a_lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn write_evaluation<M: ConditionalModel>(
    model: &M,
    dataset: &SurvivalDataset,
    out: &Path,
) -> CliResult<()> {
    let report = evaluate(model, dataset)?;
    write_json(&out.join("report.json"), &report)?;

    let mut scores = String::from("subject,nll,crps,risk\n");
    for (i, s) in report.per_subject.iter().enumerate() {
        let crps = s.crps.map(|v| v.to_string()).unwrap_or_default();
        scores.push_str(&format!("{i},{},{crps},{}\n", s.nll, s.risk));
    }
    write_text(&out.join("scores.csv"), &scores)?;

    let times = cdf_grid_times(model, CDF_GRID_POINTS);
    let path = out.join("cdf_grid.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| CliError::io(&path, e);
    writeln!(w, "subject,time,cdf").map_err(io)?;
    for (i, obs) in dataset.observations.iter().enumerate() {
        let dist = model.distribution(&obs.covariates)?;
        for &t in &times {
            writeln!(w, "{i},{t},{}", dist.cdf(t)).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let dataset = validate_dataset(parse_dataset_csv(&args.data)?, ValidationMode::Scoring)?;
    let kind = match &model {
        LoadedModel::Single(m) => {
            write_evaluation(m, &dataset, &args.out)?;
            "single"
        }
        LoadedModel::Ensemble(e) => {
            write_evaluation(e, &dataset, &args.out)?;
            "ensemble"
        }
    };
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "command": "evaluate",
            "version": env!("CARGO_PKG_VERSION"),
            "data": args.data,
            "model": args.model,
            "model_kind": kind,
            "n_subjects": dataset.len(),
            "cdf_grid_points": CDF_GRID_POINTS,
            "outputs": ["report.json", "scores.csv", "cdf_grid.csv"],
        }),
    )
}

fn run_sample(args: &SampleArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let dataset = validate_dataset(parse_dataset_csv(&args.data)?, ValidationMode::Scoring)?;
    let config = SynthConfig {
        replication: args.replication,
        censor_at_max: args.censor_at_max,
        seed: args.seed,
    };
    let synthetic = match &model {
        LoadedModel::Single(m) => generate_semisynthetic(m, &dataset, &config)?,
        LoadedModel::Ensemble(e) => generate_semisynthetic(e, &dataset, &config)?,
    };
    write_dataset_csv(&args.out.join("synthetic.csv"), &synthetic)?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "command": "sample",
            "version": env!("CARGO_PKG_VERSION"),
            "data": args.data,
            "model": args.model,
            "synth_config": config,
            "seed": config.seed,
            "n_subjects": dataset.len(),
            "n_synthetic": synthetic.len(),
            "outputs": ["synthetic.csv"],
        }),
    )
}

fn run_ensemble(args: &EnsembleArgs) -> CliResult<()> {
    if args.top == 0 || args.top > args.members {
        return Err(CliError::Config(format!(
            "--top must satisfy 1 <= top <= members (got top = {}, members = {})",
            args.top, args.members
        )));
    }
    let dataset = load_fitting_data(&args.data)?;
    let config = load_config(&args.spec, &args.overrides)?;
    let (spec, train_config) = config.resolve(dataset.n_features())?;
    let members = fit_members(&dataset, &spec, &train_config, args.members, args.jobs)?;
    let ensemble = select_top(&members, args.top)?;

    let out = &args.out;
    let member_dir = out.join("members");
    fs::create_dir_all(&member_dir).map_err(|e| CliError::io(&member_dir, e))?;
    for m in &members {
        let name = format!("member_{:02}", m.index);
        write_bytes(
            &member_dir.join(format!("{name}.json")),
            &serialize_model(&m.model)?,
        )?;
        write_text(
            &member_dir.join(format!("{name}_log.csv")),
            &training_log_csv(&m.log),
        )?;
    }
    let selected: Vec<u64> = {
        let mut ranked: Vec<_> = members.iter().collect();
        ranked.sort_by(|a, b| {
            a.model
                .validation_nll
                .total_cmp(&b.model.validation_nll)
                .then(a.seed.cmp(&b.seed))
        });
        ranked.iter().take(args.top).map(|m| m.seed).collect()
    };
    let ranking: Vec<Value> = members
        .iter()
        .map(|m| {
            json!({
                "index": m.index,
                "seed": m.seed,
                "file": format!("members/member_{:02}.json", m.index),
                "validation_nll": m.model.validation_nll,
                "selected": selected.contains(&m.seed),
            })
        })
        .collect();
    write_json(
        &out.join("selection.json"),
        &json!({ "members": args.members, "top": args.top, "candidates": ranking }),
    )?;
    write_bytes(&out.join("ensemble.json"), &serialize_ensemble(&ensemble)?)?;
    write_json(&out.join("report.json"), &evaluate(&ensemble, &dataset)?)?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "ensemble",
            "version": env!("CARGO_PKG_VERSION"),
            "data": args.data,
            "spec_file": args.spec,
            "n_subjects": dataset.len(),
            "spec": spec,
            "train_config": train_config,
            "seed": spec.seed,
            "members": args.members,
            "top": args.top,
            "jobs": args.jobs,
            "outputs": ["members/", "selection.json", "ensemble.json", "report.json"],
        }),
    )
}
