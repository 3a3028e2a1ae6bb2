//! `wsadapt`: generate synthetic tracking data, pretrain and adapt the
//! student tracker, evaluate trackers and plot the results.

mod config;
mod data;
mod eval;
mod gen_data;
mod plot;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::parse_override;

/// A failure detected by the command layer itself, with a stable kind tag.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: &'static str, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "wsadapt",
    version,
    about = "Weakly supervised tracker adaptation on synthetic domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits for a domain preset.
    GenData(gen_data::GenDataArgs),
    /// Pretrain a fresh student on a (source) dataset with dense IoU supervision.
    Pretrain(train::PretrainArgs),
    /// Adapt a student to a target dataset with teachers and weak supervision.
    Adapt(train::AdaptArgs),
    /// One-pass evaluation of a tracker on a split.
    Eval(eval::EvalArgs),
    /// Render training logs or curve CSVs to an SVG line chart.
    Plot(plot::PlotArgs),
}

/// Flags shared by the commands that read an experiment config. Each one
/// overrides the config key of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.workers=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub set: Vec<(String, Value)>,
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Domain preset name.
    #[arg(long)]
    pub domain: Option<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    /// Config overrides in application order: `--set` first, then the
    /// dedicated flags.
    pub fn overrides(&self) -> anyhow::Result<Vec<(String, Value)>> {
        let mut o = self.set.clone();
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        if let Some(d) = &self.data {
            o.push(("data".into(), path(d)));
        }
        if let Some(d) = &self.out {
            o.push(("out".into(), path(d)));
        }
        if let Some(d) = &self.domain {
            o.push(("domain".into(), Value::String(d.clone())));
        }
        if let Some(s) = self.seed {
            o.push(("seed".into(), int(s, "--seed")?));
        }
        if let Some(j) = self.jobs {
            o.push(("train.jobs".into(), int(j as u64, "--jobs")?));
        }
        Ok(o)
    }
}

pub fn int(v: u64, what: &str) -> anyhow::Result<Value> {
    i64::try_from(v)
        .map(Value::Integer)
        .map_err(|_| CliError::new("usage", format!("{what} must be below 2^63")).into())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.kind;
        }
        if let Some(c) = cause.downcast_ref::<wsadapt::Error>() {
            return c.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "internal"
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let body = text.split("\n\n").next().unwrap_or("");
            eprintln!(
                "error: kind=usage msg={}",
                one_line(body.trim_start_matches("error:"))
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data::run(&a),
        Command::Pretrain(a) => train::run_pretrain(&a),
        Command::Adapt(a) => train::run_adapt(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Plot(a) => plot::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: kind={} msg={}",
                error_kind(&e),
                one_line(&format!("{e:#}"))
            );
            ExitCode::FAILURE
        }
    }
}
