use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use wsadapt::evaluator::{
    curve_csv, evaluate_videos, results_csv, OracleTracker, StayTracker, StudentTracker,
    TeacherTracker, Tracker,
};
use wsadapt::plot::{LineChart, Series};
use wsadapt::seeds;
use wsadapt::student::Checkpoint;

use crate::config::ExperimentConfig;
use crate::data::{load_split, require_dir, require_file, write_text};
use crate::{int, CliError, CommonArgs};

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Student checkpoint; required for the student tracker.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to evaluate.
    #[arg(long)]
    pub split: Option<String>,
    /// `student`, `oracle`, `stay` or `teacher:<name>`.
    #[arg(long)]
    pub tracker: Option<String>,
    /// Score only every k-th frame.
    #[arg(long, value_name = "K")]
    pub sparse_gt: Option<usize>,
    /// Skip the SVG curves.
    #[arg(long)]
    pub no_svg: bool,
}

fn build_tracker(
    spec: &str,
    cfg: &ExperimentConfig,
    checkpoint: Option<&PathBuf>,
) -> Result<Box<dyn Tracker>> {
    Ok(match spec {
        "student" => {
            let path = checkpoint.ok_or_else(|| {
                CliError::new("missing", "the student tracker needs --checkpoint")
            })?;
            let ck = Checkpoint::load(path)?;
            Box::new(StudentTracker::new(ck.params, cfg.train.chi))
        }
        "oracle" => Box::new(OracleTracker),
        "stay" => Box::new(StayTracker::default()),
        other => {
            let name = other.strip_prefix("teacher:").ok_or_else(|| {
                CliError::new(
                    "usage",
                    format!("unknown tracker {other:?} (student, oracle, stay, teacher:<name>)"),
                )
            })?;
            let profile = cfg.train.teachers.get(name).ok_or_else(|| {
                let known: Vec<&str> = cfg
                    .train
                    .teachers
                    .teachers
                    .iter()
                    .map(|t| t.name.as_str())
                    .collect();
                CliError::new(
                    "usage",
                    format!("no teacher named {name:?} (known: {})", known.join(", ")),
                )
            })?;
            let seed = seeds::derive(cfg.seed, &[seeds::label("eval-teacher")]);
            Box::new(TeacherTracker::new(
                profile.clone(),
                cfg.domain.clone(),
                seed,
            ))
        }
    })
}

pub fn run(a: &EvalArgs) -> Result<()> {
    let mut o = a.common.overrides()?;
    if let Some(t) = &a.tracker {
        o.push(("eval.tracker".into(), toml::Value::String(t.clone())));
    }
    if let Some(k) = a.sparse_gt {
        o.push(("eval.sparse_gt".into(), int(k as u64, "--sparse-gt")?));
    }
    if a.no_svg {
        o.push(("eval.svg".into(), toml::Value::Boolean(false)));
    }
    if let Some(s) = &a.split {
        o.push(("splits.test".into(), toml::Value::String(s.clone())));
    }
    let cfg = ExperimentConfig::load(a.common.config.as_deref(), &o)?;
    require_dir(&cfg.data, "dataset root")?;
    if let Some(p) = &a.checkpoint {
        require_file(p, "checkpoint")?;
    }
    let mut tracker = build_tracker(&cfg.eval.tracker, &cfg, a.checkpoint.as_ref())?;
    let videos = load_split(&cfg.data, &cfg.splits.test)?;
    let (rows, mean) = evaluate_videos(tracker.as_mut(), &videos, cfg.eval.sparse_gt)?;

    let preamble = cfg.preamble("eval");
    let out = &cfg.out;
    write_text(
        &out.join("results.csv"),
        &results_csv(&preamble, &rows, &mean),
    )?;
    write_text(
        &out.join("success_curve.csv"),
        &curve_csv(&preamble, &mean.success),
    )?;
    write_text(
        &out.join("precision_curve.csv"),
        &curve_csv(&preamble, &mean.precision),
    )?;
    if cfg.eval.svg {
        let provenance = preamble.trim_start_matches("# ").trim_end().to_string();
        let chart = |title: &str, x: &str, points: &[(f64, f64)]| LineChart {
            title: title.into(),
            x_label: x.into(),
            y_label: "fraction of frames".into(),
            y_range: Some((0.0, 1.0)),
            series: vec![Series {
                name: tracker.name().to_string(),
                points: points.to_vec(),
            }],
            provenance: provenance.clone(),
        };
        let success = chart("Success plot", "IoU threshold", &mean.success).to_svg()?;
        let precision =
            chart("Precision plot", "center distance (px)", &mean.precision).to_svg()?;
        write_text(&out.join("success.svg"), &success)?;
        write_text(&out.join("precision.svg"), &precision)?;
    }
    println!(
        "tracker={} split={} videos={} sparse_gt={} ss={:.4} ps={:.4} fps={:.1}",
        tracker.name(),
        cfg.splits.test,
        rows.len(),
        cfg.eval.sparse_gt,
        mean.ss,
        mean.ps,
        mean.fps
    );
    Ok(())
}
