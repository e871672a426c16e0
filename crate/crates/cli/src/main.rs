//! `oceanhpo`: generate data, train, search, roll out and report.

mod manifest;
mod tables;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use oceanhpo_core::eval::{
    self, baseline_configuration, rollout, AccForm, EpochClock, FnoPredictor, OraclePredictor, Predictor,
    StopperConfig, TrainSettings, VARIABLES,
};
use oceanhpo_core::exec::{self, EvaluatorSpec, SearchRun, WorkerKind};
use oceanhpo_core::fno::Checkpoint;
use oceanhpo_core::ocean::{self, GenConfig, PairedDataset, Subset, DEFAULT_RATIOS};
use oceanhpo_core::{default_space, Configuration, OptimizerSettings};
use serde_json::json;

use manifest::{write_atomic, RunManifest};

/// Bad flags or inputs; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "oceanhpo", version, about = "Hyperparameter search for FNO ocean surrogates")]
struct Cli {
    /// Directory for artifacts that are not given an explicit path.
    #[arg(long, global = true, env = "OCEANHPO_OUT", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the synthetic ensemble.
    GenData(GenArgs),
    /// Train the reference configuration.
    Baseline(TrainArgs),
    /// Train a configuration from a JSON file.
    Train(TrainArgs),
    /// Run the asynchronous multiobjective search.
    Search(SearchArgs),
    /// Autoregressive rollout on the test simulations.
    Rollout(RolloutArgs),
    /// Parallel-coordinate and quantile scatter tables from a results log.
    Report(ReportArgs),
    #[command(hide = true)]
    Worker,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 12)]
    sims: usize,
    #[arg(long, default_value_t = 10)]
    days: usize,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    kappa_min: Option<f64>,
    #[arg(long)]
    kappa_max: Option<f64>,
    /// Sidecar path; the blob is written next to it with a `.bin` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Ensemble sidecar written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hyperparameters as a JSON object (required by `train`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: u32,
    /// Overrides the loss weight (1.0 is pure MSE).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_acc_form, default_value = "pearson")]
    acc_form: AccForm,
    /// Enables both stoppers with their default settings.
    #[arg(long)]
    stoppers: bool,
    /// Prefix of the written artifacts.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    max_epochs: u32,
    #[arg(long, default_value_t = oceanhpo_core::eval::train::DEFAULT_GRACE_EPOCHS)]
    grace_epochs: u32,
    #[arg(long, default_value_t = oceanhpo_core::eval::train::DEFAULT_EPOCH_TIME_LIMIT_S)]
    epoch_limit: f64,
    /// `wall` or `cpu` (per-thread CPU time).
    #[arg(long, default_value = "wall")]
    epoch_clock: EpochClock,
    #[arg(long)]
    no_stoppers: bool,
    /// Run each worker as a child process instead of a thread.
    #[arg(long)]
    processes: bool,
    /// Results log; defaults to `results.jsonl` in the output directory.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue an interrupted search with the same flags.
    #[arg(long)]
    resume: bool,
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
    /// Evaluate the cheap synthetic problem instead of training.
    #[arg(long, hide = true)]
    synthetic: bool,
    #[arg(long, hide = true, default_value_t = 0)]
    synthetic_ms: u64,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 29)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Predict the true next frame.
    #[arg(long, hide = true)]
    oracle: bool,
    #[arg(long, default_value_t = 0, hide = true)]
    split_seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
}

fn parse_acc_form(s: &str) -> std::result::Result<AccForm, String> {
    match s {
        "pearson" => Ok(AccForm::Pearson),
        "printed" => Ok(AccForm::Printed),
        _ => Err(format!("unknown ACC form `{s}` (pearson, printed)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir;
    if !matches!(cli.command, Command::Worker) {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(&out, a),
        Command::Baseline(a) => train_cmd(&out, a, true),
        Command::Train(a) => train_cmd(&out, a, false),
        Command::Search(a) => search(&out, a),
        Command::Rollout(a) => rollout_cmd(&out, a),
        Command::Report(a) => report(&out, a),
        Command::Worker => {
            exec::serve(std::io::stdin().lock(), std::io::stdout().lock())?;
            Ok(())
        }
    }
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(())
}

fn gen_data(out: &Path, a: GenArgs) -> Result<()> {
    let clock = Instant::now();
    let mut gen = GenConfig {
        n_sims: a.sims,
        timesteps_out: a.days,
        grid: a.grid,
        substeps_per_day: a.substeps,
        seed: a.seed,
        ..GenConfig::default()
    };
    if let Some(lo) = a.kappa_min {
        gen.kappa_range[0] = lo;
    }
    if let Some(hi) = a.kappa_max {
        gen.kappa_range[1] = hi;
    }
    if a.days < 2 {
        return Err(usage("--days must be at least 2 to form input/target pairs"));
    }
    gen.validate().map_err(|e| usage(e.to_string()))?;
    let path = a.out.unwrap_or_else(|| out.join("ensemble.json"));
    log::info!("simulating {} x {} days on a {}x{} grid", gen.n_sims, gen.timesteps_out, gen.grid, gen.grid);
    let ens = ocean::generate_ensemble(&gen)?;
    ocean::save_ensemble(&ens, &path)?;
    let mut m = RunManifest::new("gen-data", serde_json::to_value(&gen)?).seed("data", gen.seed);
    m.output(&path);
    m.output(&ocean::storage::blob_path(&path));
    m.finish(&out.join("gen-data.manifest.json"), clock.elapsed().as_secs_f64())?;
    println!("{}", path.display());
    Ok(())
}

fn load_data(d: &DataArgs) -> Result<PairedDataset> {
    require_file(&d.data, "data file")?;
    let ens = ocean::load_ensemble(&d.data)?;
    Ok(PairedDataset::new(&ens, DEFAULT_RATIOS, d.split_seed)?)
}

fn read_config(p: &Path) -> Result<Configuration> {
    require_file(p, "config file")?;
    let text = fs::read_to_string(p)?;
    let c: Configuration =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
    Ok(c)
}

fn metrics_table(m: &eval::Metrics) -> Vec<serde_json::Value> {
    VARIABLES
        .iter()
        .zip(&m.variables)
        .map(|(name, v)| {
            json!({
                "variable": name,
                "mse": v.mse,
                "log_rse": v.log_rse,
                "log_one_minus_acc": v.log_one_minus_acc,
                "rse": v.rse,
                "acc": v.acc,
            })
        })
        .collect()
}

fn train_cmd(out: &Path, a: TrainArgs, baseline: bool) -> Result<()> {
    let clock = Instant::now();
    let mut config = match (&a.config, baseline) {
        (Some(p), _) => read_config(p)?,
        (None, true) => baseline_configuration(),
        (None, false) => return Err(usage("train needs --config")),
    };
    if let Some(alpha) = a.alpha {
        config.set("alpha", alpha);
    }
    default_space().validate(&config).map_err(|e| usage(e.to_string()))?;
    let data = load_data(&a.data)?;
    let stoppers = if a.stoppers { StopperConfig::default() } else { StopperConfig::disabled() };
    let settings = TrainSettings { max_epochs: a.epochs, stoppers, acc_form: a.acc_form, ..Default::default() };
    let result = eval::train(0, &config, &data, &settings, a.seed, |r| {
        log::info!("epoch {:>3}  train {:.5}  val mse {:.5}  val acc {:.4}", r.epoch, r.train_loss, r.val_mse, -r.val_neg_acc);
    })?;
    let Some(ck) = result.checkpoint else {
        return Err(anyhow!("training produced no model: {:?}", result.record.outcome));
    };
    let alpha = config.float("alpha")?;
    let eval_on = |subset| eval::evaluate(&ck.config, &ck.params, &data, subset, alpha, a.acc_form, settings.eval_batch);
    let (val, _) = eval_on(Subset::Val)?;
    let (test, _) = eval_on(Subset::Test)?;

    let tag = a.tag.unwrap_or_else(|| if baseline { "baseline".into() } else { "train".into() });
    let ck_path = out.join(format!("{tag}.ckpt"));
    let metrics_path = out.join(format!("{tag}.metrics.json"));
    let table_path = out.join(format!("{tag}.table.csv"));
    ck.save(&ck_path)?;
    let doc = json!({
        "config": config,
        "alpha": alpha,
        "epochs": a.epochs,
        "seed": a.seed,
        "split_seed": a.data.split_seed,
        "record": result.record,
        "best_epoch": ck.extra["best_epoch"],
        "epochs_report": result.reports,
        "validation": { "mse": val.mse, "acc": val.acc, "variables": metrics_table(&val) },
        "test": { "mse": test.mse, "acc": test.acc, "variables": metrics_table(&test) },
    });
    write_atomic(&metrics_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    let mut w = csv::Writer::from_path(&table_path)?;
    w.write_record(["variable", "log_rse", "log_one_minus_acc"])?;
    for (name, v) in VARIABLES.iter().zip(&test.variables) {
        w.write_record([name.to_string(), format!("{:e}", v.log_rse), format!("{:e}", v.log_one_minus_acc)])?;
    }
    w.flush()?;

    let command = if baseline { "baseline" } else { "train" };
    let resolved = json!({ "config": config, "epochs": a.epochs, "acc_form": a.acc_form, "stoppers": a.stoppers });
    let mut m = RunManifest::new(command, resolved).seed("init", a.seed).seed("split", a.data.split_seed);
    m.input(&a.data.data);
    if let Some(p) = &a.config {
        m.input(p);
    }
    for p in [&ck_path, &metrics_path, &table_path] {
        m.output(p);
    }
    m.finish(&out.join(format!("{tag}.manifest.json")), clock.elapsed().as_secs_f64())?;
    println!("{}", metrics_path.display());
    Ok(())
}

fn search(out: &Path, a: SearchArgs) -> Result<()> {
    let clock = Instant::now();
    if a.workers == 0 || a.budget == 0 {
        return Err(usage("--workers and --budget must be positive"));
    }
    let evaluator = if a.synthetic {
        EvaluatorSpec::Synthetic { min_ms: a.synthetic_ms, max_ms: a.synthetic_ms, diverge: false, crash_on: None }
    } else {
        require_file(&a.data.data, "data file")?;
        let stoppers = if a.no_stoppers {
            StopperConfig::disabled()
        } else {
            StopperConfig {
                grace_epochs: a.grace_epochs,
                epoch_time_limit_s: a.epoch_limit,
                clock: a.epoch_clock,
                ..StopperConfig::default()
            }
        };
        stoppers.validate().map_err(|e| usage(e.to_string()))?;
        let data = fs::canonicalize(&a.data.data)?;
        let settings = TrainSettings { max_epochs: a.max_epochs, stoppers, ..Default::default() };
        EvaluatorSpec::Train { data, split_seed: a.data.split_seed, ratios: DEFAULT_RATIOS, settings }
    };
    let space = if a.synthetic { oceanhpo_core::synthetic::synthetic_space() } else { default_space() };
    let log_path = a.log.clone().unwrap_or_else(|| out.join("results.jsonl"));
    let run = SearchRun {
        space: space.clone(),
        optimizer: OptimizerSettings::for_workers(a.workers, a.seed),
        evaluator,
        workers: a.workers,
        budget: a.budget,
        seed: a.seed,
        log_path: log_path.clone(),
        stop_after: a.stop_after,
    };
    let kind = if a.processes {
        WorkerKind::Processes { program: std::env::current_exe()?, args: vec!["worker".into()] }
    } else {
        WorkerKind::Threads
    };
    let summary = if a.resume {
        require_file(&log_path, "results log")?;
        exec::resume(&log_path, &kind, Some(&run))?
    } else {
        if log_path.exists() && fs::metadata(&log_path)?.len() > 0 {
            return Err(usage(format!("{} exists; pass --resume to continue it", log_path.display())));
        }
        exec::run_search(&run, &kind)?
    };
    if summary.interrupted {
        log::warn!("search stopped after {} trials", summary.records.len());
    }
    let records = summary.records;
    let pareto_path = out.join("pareto.csv");
    let best_path = out.join("best.json");
    tables::write_pareto(&pareto_path, &space, &records)?;
    let mut outputs = vec![log_path.clone(), pareto_path];
    match tables::best(&records) {
        Ok(best) => {
            write_atomic(&best_path, serde_json::to_string_pretty(&best)?.as_bytes())?;
            fs::write(out.join("best_config.json"), serde_json::to_string_pretty(best.config)?)?;
            outputs.push(best_path);
            outputs.push(out.join("best_config.json"));
        }
        Err(e) => log::warn!("{e}"),
    }
    let resolved = json!({
        "workers": a.workers, "budget": a.budget, "max_epochs": a.max_epochs, "grace_epochs": a.grace_epochs,
        "epoch_limit": a.epoch_limit, "epoch_clock": a.epoch_clock, "stoppers": !a.no_stoppers,
        "processes": a.processes, "resume": a.resume, "space_hash": space.hash(),
    });
    let mut m = RunManifest::new("search", resolved).seed("search", a.seed).seed("split", a.data.split_seed);
    if !a.synthetic {
        m.input(&a.data.data);
    }
    for p in &outputs {
        m.output(p);
    }
    m.finish(&out.join("search.manifest.json"), clock.elapsed().as_secs_f64())?;
    println!("{}", log_path.display());
    Ok(())
}

fn rollout_cmd(out: &Path, a: RolloutArgs) -> Result<()> {
    let clock = Instant::now();
    require_file(&a.data, "data file")?;
    if a.steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let ens = ocean::load_ensemble(&a.data)?;
    let checkpoint = match &a.checkpoint {
        Some(p) if !a.oracle => {
            require_file(p, "checkpoint")?;
            Some(Checkpoint::load(p)?)
        }
        _ => None,
    };
    let split_seed = match &checkpoint {
        Some(ck) => ck.extra["split_seed"].as_u64().ok_or_else(|| anyhow!("checkpoint lacks split_seed"))?,
        None => a.split_seed,
    };
    let data = PairedDataset::new(&ens, DEFAULT_RATIOS, split_seed)?;
    let fno;
    let oracle = OraclePredictor { data: &data };
    let model: &dyn Predictor = match checkpoint {
        Some(ck) => {
            if ck.extra["grid"].as_u64() != Some(data.grid() as u64) {
                return Err(anyhow!("checkpoint was trained on grid {} but the data grid is {}", ck.extra["grid"], data.grid()));
            }
            if ck.extra["normalizer"] != serde_json::to_value(data.normalizer())? {
                return Err(anyhow!("checkpoint normalization does not match this data"));
            }
            fno = FnoPredictor::from_checkpoint(ck);
            &fno
        }
        None => &oracle,
    };
    let test = data.split().test.clone();
    if test.is_empty() {
        return Err(anyhow!("no test simulations in this split"));
    }
    let mut sums: Vec<Vec<(f64, f64, usize)>> = vec![vec![(0.0, 0.0, 0); VARIABLES.len()]; a.steps];
    for &sim in &test {
        let r = rollout(model, &data, sim, 0, a.steps)?;
        for s in &r.steps {
            if let Some(vars) = &s.variables {
                for (acc, v) in sums[s.step - 1].iter_mut().zip(vars) {
                    acc.0 += v.log_rse;
                    acc.1 += v.log_one_minus_acc;
                    acc.2 += 1;
                }
            }
        }
    }
    let path = a.out.unwrap_or_else(|| out.join("rollout.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", "variable", "mean_log_rse", "mean_log_one_minus_acc"])?;
    let mut skipped = 0;
    for (k, row) in sums.iter().enumerate() {
        for (name, &(rse, oma, n)) in VARIABLES.iter().zip(row) {
            if n == 0 {
                skipped += 1;
                continue;
            }
            w.write_record([(k + 1).to_string(), name.to_string(), format!("{:e}", rse / n as f64), format!("{:e}", oma / n as f64)])?;
        }
    }
    w.flush()?;
    if skipped > 0 {
        log::warn!("steps beyond the last stored day have no ground truth and were omitted");
    }
    let resolved = json!({ "steps": a.steps, "oracle": a.oracle, "test_sims": test });
    let mut m = RunManifest::new("rollout", resolved).seed("split", split_seed);
    m.input(&a.data);
    if let Some(p) = &a.checkpoint {
        m.input(p);
    }
    m.output(&path);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rollout").to_string();
    m.finish(&out.join(format!("{stem}.manifest.json")), clock.elapsed().as_secs_f64())?;
    println!("{}", path.display());
    Ok(())
}

fn report(out: &Path, a: ReportArgs) -> Result<()> {
    let clock = Instant::now();
    require_file(&a.log, "results log")?;
    let (header, records) = exec::read_log(&a.log)?;
    if records.is_empty() {
        return Err(anyhow!("{} holds no trials", a.log.display()));
    }
    let pc = out.join("parallel_coords.csv");
    let sc = out.join("scatter.csv");
    tables::write_parallel_coords(&pc, &header.space, &records)?;
    tables::write_scatter(&sc, &records)?;
    let mut m = RunManifest::new("report", json!({ "trials": records.len() }));
    m.input(&a.log);
    m.output(&pc);
    m.output(&sc);
    m.finish(&out.join("report.manifest.json"), clock.elapsed().as_secs_f64())?;
    println!("{}", pc.display());
    Ok(())
}
