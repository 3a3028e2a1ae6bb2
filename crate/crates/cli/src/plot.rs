use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use wsadapt::plot::{LineChart, Series};
use wsadapt::trainer::{TrainLog, LOG_HEADER};
use wsadapt::Error;

use crate::data::write_text;
use crate::CliError;

const CURVE_HEADER: &str = "threshold,fraction";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    ValSs,
    ValPs,
}

#[derive(Args, Clone, Debug)]
pub struct PlotArgs {
    /// Training-log or curve CSVs; each becomes one line.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Legend labels, comma separated; default is the input path.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub title: Option<String>,
    /// Column plotted from training logs.
    #[arg(long, value_enum, default_value_t = Metric::ValSs)]
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Log,
    Curve,
}

fn parse_error(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        what: "csv",
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

fn parse_curve(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            header = true;
            continue;
        }
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| parse_error(path, i + 1, "expected 2 fields"))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| parse_error(path, i + 1, format!("{s:?}: {e}")))
        };
        points.push((num(x)?, num(y)?));
    }
    if points.is_empty() {
        return Err(parse_error(path, text.lines().count(), "no data rows").into());
    }
    Ok(points)
}

/// Series from one input, plus its `#` provenance lines.
fn read_input(path: &Path, metric: Metric) -> Result<(Kind, Vec<(f64, f64)>, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let provenance: Vec<String> = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .map(|l| l.trim().to_string())
        .collect();
    let header = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (kind, points) = match header {
        None => return Err(parse_error(path, text.lines().count(), "empty csv").into()),
        Some((_, h)) if h.trim() == LOG_HEADER => {
            let log = TrainLog::from_csv(&text, path)?;
            let points: Vec<(f64, f64)> = log
                .rows
                .iter()
                .filter_map(|r| {
                    let v = match metric {
                        Metric::ValSs => r.val_ss,
                        Metric::ValPs => r.val_ps,
                    };
                    v.map(|v| (r.iteration as f64, v))
                })
                .collect();
            if points.is_empty() {
                return Err(parse_error(path, text.lines().count(), "no evaluated rows").into());
            }
            (Kind::Log, points)
        }
        Some((_, h)) if h.trim() == CURVE_HEADER => (Kind::Curve, parse_curve(&text, path)?),
        Some((i, h)) => {
            return Err(parse_error(
                path,
                i + 1,
                format!(
                    "unrecognized header {:?} (expected training log or curve)",
                    h.trim()
                ),
            )
            .into())
        }
    };
    Ok((kind, points, provenance))
}

pub fn run(a: &PlotArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.inputs.len() {
        return Err(CliError::new(
            "usage",
            format!("{} labels for {} inputs", a.labels.len(), a.inputs.len()),
        )
        .into());
    }
    let mut series = Vec::new();
    let mut provenance = Vec::new();
    let mut kinds = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let (kind, points, prov) = read_input(path, a.metric)?;
        let name = a
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| path.display().to_string());
        for p in prov {
            provenance.push(format!("{name}: {p}"));
        }
        kinds.push(kind);
        series.push(Series { name, points });
    }
    if kinds.windows(2).any(|w| w[0] != w[1]) {
        return Err(
            CliError::new("usage", "cannot mix training logs and curves in one plot").into(),
        );
    }
    let (title, x_label, y_label) = match (kinds[0], a.metric) {
        (Kind::Log, Metric::ValSs) => ("Validation success", "iteration", "success score"),
        (Kind::Log, Metric::ValPs) => ("Validation precision", "iteration", "precision score"),
        (Kind::Curve, _) => ("Evaluation curve", "threshold", "fraction of frames"),
    };
    let chart = LineChart {
        title: a.title.clone().unwrap_or_else(|| title.into()),
        x_label: x_label.into(),
        y_label: y_label.into(),
        y_range: Some((0.0, 1.0)),
        series,
        provenance: provenance.join("; "),
    };
    let svg = chart.to_svg()?;
    write_text(&a.out, &svg)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}
