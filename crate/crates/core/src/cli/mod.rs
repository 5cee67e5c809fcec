//! The `scal` executable: config-driven subcommands writing reproducible
//! artifact directories.

mod config;

pub use config::{default_ope_agents, load_config, standard_target, ConfigError, ExperimentConfig, TargetBufferConfig};

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::{PolicyCheckpoint, PolicyParams};
use crate::alignment::estimate_conditional_kl;
use crate::evaluation::{
    bound_check, evaluate_policy, ope_study, plot, shift_study, BoundReport, EvalError, OpeReport, Pilot,
    ShiftReport,
};
use crate::rng::stream;
use crate::training::{
    sample_target_buffer, scal_train, train_dagger_oracle, Buffer, Provenance, SourceRecord, TargetRecord,
    TrainingError,
};
use crate::world::PidExpert;

pub const BUILD_ID: &str = env!("SCAL_BUILD_ID");

#[derive(Debug, Parser)]
#[command(name = "scal", about = "State-conditional adversarial transfer lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Defaults to the built-in config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for studies.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (a file for gen-config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the default config.
    GenConfig,
    /// Sample the label-free target buffer.
    CollectTarget,
    /// Train SCAL on the source domain against a target buffer.
    TrainScal {
        /// Existing target buffer (JSONL); sampled from the config otherwise.
        #[arg(long)]
        target_buffer: Option<PathBuf>,
    },
    /// Train the fully supervised DAgger baseline in the target domain.
    TrainOracle,
    /// Roll out a trained policy in both domains.
    Eval {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    OpeStudy,
    ShiftStudy,
    /// Evaluate the transfer bound for a trained policy.
    BoundCheck {
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Defaults to source_buffer.jsonl next to the policy.
        #[arg(long)]
        source_buffer: Option<PathBuf>,
        /// Defaults to target_buffer.jsonl next to the policy.
        #[arg(long)]
        target_buffer: Option<PathBuf>,
    },
    /// Summarize a finished run directory.
    Report {
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenConfig => "gen-config",
            Command::CollectTarget => "collect-target",
            Command::TrainScal { .. } => "train-scal",
            Command::TrainOracle => "train-oracle",
            Command::Eval { .. } => "eval",
            Command::OpeStudy => "ope-study",
            Command::ShiftStudy => "shift-study",
            Command::BoundCheck { .. } => "bound-check",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(_) | TrainingError::Precondition(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Precondition(_) => CliError::Validation(e.to_string()),
            EvalError::Training(t) => t.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<crate::world::WorldError> for CliError {
    fn from(e: crate::world::WorldError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    build_id: &'a str,
}

/// A run directory with the shared provenance files already written.
struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(path: PathBuf, command: &str, config: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&path).map_err(io_err(&path))?;
        let dir = Self { path };
        dir.write("config.json", config.to_json())?;
        let manifest = Manifest { command, config_hash: config.hash(), seed: config.seed, build_id: BUILD_ID };
        dir.write_json("manifest.json", &manifest)?;
        Ok(dir)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(io_err(&p))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
        self.write(name, text)
    }

    fn write_jsonl<R: Serialize>(&self, name: &str, buf: &Buffer<R>) -> Result<(), CliError> {
        let p = self.file(name);
        let f = fs::File::create(&p).map_err(io_err(&p))?;
        Ok(buf.write_jsonl(f)?)
    }

    fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.file(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.flush().map_err(io_err(&p))
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = std::env::var("SCAL_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    if !["error", "warn", "info", "debug"].contains(&level.as_str()) {
        return Err(CliError::Validation(format!(
            "SCAL_LOG_LEVEL must be one of error, warn, info, debug (got {level:?})"
        )));
    }
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Validation(format!("missing {what}: pass {flag} <path>")))?;
    if !p.exists() {
        return Err(CliError::Validation(format!("missing {what}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn read_policy(path: &Path) -> Result<PolicyParams, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let ckpt: PolicyCheckpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{} is not a policy checkpoint: {e}", path.display())))?;
    ckpt.into_policy().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn read_buffer<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Buffer<R>, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Buffer::read_jsonl(f, Provenance::default()).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn sibling_or(explicit: &Option<PathBuf>, policy: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| policy.parent().unwrap_or(Path::new(".")).join(name))
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    init_logging()?;
    if cli.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = cli.out.clone().unwrap_or_else(|| Path::new(&config.output_dir).join(cli.command.name()));
    pool.install(|| dispatch(&cli.command, &config, out))
}

fn dispatch(command: &Command, config: &ExperimentConfig, out: PathBuf) -> Result<(), CliError> {
    let expert = PidExpert::new(config.expert);
    let name = command.name();
    match command {
        Command::GenConfig => match out.extension() {
            Some(_) => {
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                }
                fs::write(&out, config.to_json()).map_err(io_err(&out))
            }
            None => {
                let dir = RunDir::create(out, name, config)?;
                log::info!("wrote {}", dir.file("config.json").display());
                Ok(())
            }
        },
        Command::CollectTarget => {
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let b_t = target_buffer(config, &env_t)?;
            dir.write_jsonl("target_buffer.jsonl", &b_t)
        }
        Command::TrainScal { target_buffer: tb } => {
            let env_s = config.source_env()?;
            let env_t = config.target_env()?;
            let b_t = match tb {
                Some(p) => read_buffer::<TargetRecord>(require(&Some(p.clone()), "target buffer", "--target-buffer")?)?,
                None => target_buffer(config, &env_t)?,
            };
            let dir = RunDir::create(out, name, config)?;
            let prov = Provenance { config_hash: config.hash(), seed: config.seed };
            let init = PolicyParams::random(&config.agent, &mut stream(config.seed, "policy-init"))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let o = scal_train(&config.scal, &env_s, &expert, &b_t, &init, config.seed, prov)?;
            let window = o.kl_window(config.scal.kl_eval_records);
            let ys: Vec<&[f64]> = window.iter().map(|r| r.y.as_slice()).collect();
            let xs: Vec<_> = window.iter().map(|r| r.x).collect();
            let kl_check = estimate_conditional_kl(&o.discriminator, &o.kde_source, &o.kde_target, &ys, &xs, &o.policy)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let source = evaluate_policy(&env_s, Pilot::Policy(&o.policy), &expert, &config.eval, config.eval.gamma, &mut stream(config.seed, "eval-source"))?;
            dir.write_json("policy.json", &PolicyCheckpoint::new(&o.policy, &config.hash()))?;
            dir.write_json("discriminator.json", &o.discriminator)?;
            dir.write_json("kde_source.json", &o.kde_source)?;
            dir.write_json("kde_target.json", &o.kde_target)?;
            let mut csv = Vec::new();
            o.history.write_csv(&mut csv)?;
            dir.write("history.csv", csv)?;
            dir.write_jsonl("source_buffer.jsonl", &o.source_buffer)?;
            dir.write_jsonl("target_buffer.jsonl", &b_t)?;
            let last = o.history.last().cloned();
            dir.write_json(
                "results.json",
                &serde_json::json!({
                    "final_round": last,
                    "kl_hat_standalone": kl_check,
                    "source_eval": source,
                }),
            )
        }
        Command::TrainOracle => {
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let prov = Provenance { config_hash: config.hash(), seed: config.seed };
            let init = PolicyParams::random(&config.agent, &mut stream(config.seed, "policy-init"))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let o = train_dagger_oracle(&config.scal, &env_t, &expert, &init, config.seed, prov)?;
            let target = evaluate_policy(&env_t, Pilot::Policy(&o.policy), &expert, &config.eval, config.eval.gamma, &mut stream(config.seed, "eval-target"))?;
            dir.write_json("policy.json", &PolicyCheckpoint::new(&o.policy, &config.hash()))?;
            let mut csv = Vec::new();
            o.history.write_csv(&mut csv)?;
            dir.write("history.csv", csv)?;
            dir.write_json("results.json", &serde_json::json!({ "target_eval": target }))
        }
        Command::Eval { policy } => {
            let p = require(policy, "trained policy", "--policy")?;
            let policy = read_policy(p)?;
            let env_s = config.source_env()?;
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let s = evaluate_policy(&env_s, Pilot::Policy(&policy), &expert, &config.eval, config.eval.gamma, &mut stream(config.seed, "eval-source"))?;
            let t = evaluate_policy(&env_t, Pilot::Policy(&policy), &expert, &config.eval, config.eval.gamma, &mut stream(config.seed, "eval-target"))?;
            dir.write_json("results.json", &serde_json::json!({ "policy": p.display().to_string(), "source": s, "target": t }))
        }
        Command::OpeStudy => {
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let report = ope_study(&config.ope, &config.scal, &config.agent, &env_t, &expert, config.seed)?;
            write_ope(&dir, &report)
        }
        Command::ShiftStudy => {
            let env_s = config.source_env()?;
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let report = shift_study(&config.shift, &config.scal, &config.agent, &env_s, &env_t, &expert, config.seed)?;
            write_shift(&dir, &report)
        }
        Command::BoundCheck { policy, source_buffer, target_buffer } => {
            let p = require(policy, "trained policy", "--policy")?;
            let sb = sibling_or(source_buffer, p, "source_buffer.jsonl");
            let tb = sibling_or(target_buffer, p, "target_buffer.jsonl");
            let b_s = read_buffer::<SourceRecord>(require(&Some(sb), "source buffer", "--source-buffer")?)?;
            let b_t = read_buffer::<TargetRecord>(require(&Some(tb), "target buffer", "--target-buffer")?)?;
            let policy = read_policy(p)?;
            let env_s = config.source_env()?;
            let env_t = config.target_env()?;
            let dir = RunDir::create(out, name, config)?;
            let reports = bound_check(&policy, &env_s, &env_t, &expert, b_s.records(), b_t.records(), &config.bound, config.seed)?;
            dir.write_csv("bound.csv", &reports)?;
            dir.write_json("results.json", &bound_summary(&reports))
        }
        Command::Report { run_dir } => {
            let d = require(run_dir, "run directory", "--run-dir")?;
            let summary = summarize_run(d)?;
            let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
            let p = d.join("summary.json");
            fs::write(&p, &text).map_err(io_err(&p))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn target_buffer(config: &ExperimentConfig, env_t: &crate::world::Environment) -> Result<Buffer<TargetRecord>, CliError> {
    let tb = &config.target_buffer;
    let records = sample_target_buffer(env_t, &tb.distribution, tb.size, &mut stream(config.seed, "target-buffer"))?;
    Ok(Buffer::from_records(records, Provenance { config_hash: config.hash(), seed: config.seed }))
}

fn bound_summary(reports: &[BoundReport]) -> serde_json::Value {
    let min_slack = reports.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let monotone = reports.windows(2).all(|w| w[0].gamma >= w[1].gamma || w[1].rhs >= w[0].rhs);
    serde_json::json!({ "reports": reports, "min_slack": min_slack, "rhs_nondecreasing_in_gamma": monotone })
}

fn write_ope(dir: &RunDir, report: &OpeReport) -> Result<(), CliError> {
    dir.write_csv("ope.csv", &report.rows)?;
    dir.write_json("results.json", report)?;
    let pts: Vec<(String, f64, f64)> = report.rows.iter().map(|r| (r.agent.clone(), r.kl_hat, r.target_loss)).collect();
    dir.write("ope_scatter.svg", plot::scatter("Estimated KL vs target loss", "kl_hat", "target loss", &pts))
}

fn write_shift(dir: &RunDir, report: &ShiftReport) -> Result<(), CliError> {
    dir.write_csv("shift_cells.csv", &report.cells)?;
    dir.write_csv("shift_summary.csv", &report.summary)?;
    dir.write_json("results.json", report)?;
    let mut names: Vec<&str> = Vec::new();
    for s in &report.summary {
        if !names.contains(&s.distribution.as_str()) {
            names.push(&s.distribution);
        }
    }
    let mut series: Vec<plot::Series> = names
        .iter()
        .map(|n| plot::Series {
            label: n.to_string(),
            points: report
                .summary
                .iter()
                .filter(|s| s.distribution == *n)
                .filter_map(|s| Some((s.buffer_size as f64, s.mean_max_length?)))
                .collect(),
            dashed: false,
        })
        .collect();
    let sizes: Vec<f64> = report.summary.iter().map(|s| s.buffer_size as f64).collect();
    let (lo, hi) = sizes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    series.push(plot::Series { label: "oracle".into(), points: vec![(lo, report.oracle_mean), (hi, report.oracle_mean)], dashed: true });
    dir.write("shift_lengths.svg", plot::lines("Max trajectory length vs target buffer size", "|B_t|", "max length", &series))
}

fn summarize_run(dir: &Path) -> Result<serde_json::Value, CliError> {
    let read = |name: &str| -> Result<Option<serde_json::Value>, CliError> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
    };
    let manifest = read("manifest.json")?
        .ok_or_else(|| CliError::Validation(format!("{} has no manifest.json", dir.display())))?;
    let results = read("results.json")?
        .ok_or_else(|| CliError::Validation(format!("{} has no results.json", dir.display())))?;
    let command = manifest["command"].as_str().unwrap_or_default().to_string();
    let body = match command.as_str() {
        "shift-study" => {
            let report: ShiftReport = serde_json::from_value(results).map_err(|e| CliError::Validation(e.to_string()))?;
            let expected: usize = report.summary.len();
            let failed = report.cells.iter().filter(|c| c.max_length.is_none()).count();
            serde_json::json!({
                "grid": report.summary,
                "cells": report.cells.len(),
                "failed_cells": failed,
                "grid_complete": expected > 0 && report.summary.iter().all(|s| s.completed > 0),
                "oracle_mean": report.oracle_mean,
                "oracle_variance": report.oracle_variance,
            })
        }
        "ope-study" => {
            let report: OpeReport = serde_json::from_value(results).map_err(|e| CliError::Validation(e.to_string()))?;
            serde_json::json!({
                "agents": report.rows.len(),
                "excluded": report.excluded.len(),
                "spearman_rho_loss": report.spearman_rho_loss,
                "spearman_rho_length": report.spearman_rho_length,
            })
        }
        _ => results,
    };
    Ok(serde_json::json!({ "command": command, "manifest": manifest, "summary": body }))
}
