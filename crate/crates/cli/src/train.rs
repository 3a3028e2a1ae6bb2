use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use toml::Value;
use wsadapt::seeds;
use wsadapt::student::{Checkpoint, StudentParams};
use wsadapt::trainer::{self, AdaptOutcome, StopReason};

use crate::config::ExperimentConfig;
use crate::data::{load_train_val, require_dir, require_file, write_text};
use crate::{int, CommonArgs};

pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const BEST_FILE: &str = "adapted.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overrides `train.max_iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Overrides `train.weak_delay`.
    #[arg(long)]
    pub weak_delay: Option<usize>,
}

impl TrainArgs {
    fn load(&self, extra: Vec<(String, Value)>) -> Result<ExperimentConfig> {
        let mut o = self.common.overrides()?;
        if let Some(n) = self.iterations {
            o.push((
                "train.max_iterations".into(),
                int(n as u64, "--iterations")?,
            ));
        }
        if let Some(k) = self.weak_delay {
            o.push(("train.weak_delay".into(), int(k as u64, "--weak-delay")?));
        }
        o.extend(extra);
        ExperimentConfig::load(self.common.config.as_deref(), &o)
    }
}

#[derive(Args, Clone, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Clone, Debug)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint to adapt.
    #[arg(
        long,
        conflicts_with = "from_scratch",
        required_unless_present = "from_scratch"
    )]
    pub pretrained: Option<PathBuf>,
    /// Start from a random initialization instead of a checkpoint.
    #[arg(long)]
    pub from_scratch: bool,
    /// Every worker runs RL (no distillation).
    #[arg(long, conflicts_with = "kd_only")]
    pub rl_only: bool,
    /// Every worker distills (no RL).
    #[arg(long)]
    pub kd_only: bool,
    /// Independent runs with seeds `seed, seed+1, ...`; results are averaged.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
}

pub fn init_seed(seed: u64) -> u64 {
    seeds::derive(seed, &[seeds::label("init")])
}

fn meta(cfg: &ExperimentConfig, command: &str, out: &AdaptOutcome, which: &str) -> String {
    let stop = match &out.stop {
        StopReason::Completed => "completed".to_string(),
        StopReason::EarlyStop => "early-stop".to_string(),
        StopReason::Diverged { iteration, .. } => format!("diverged@{iteration}"),
    };
    format!(
        "command={command}\nconfig_hash={}\nseed={}\ndomain={}\nparams={which}\nbest_iteration={}\nbest_val_ss={:.6}\nfinal_val_ss={:.6}\nstop={stop}\n",
        cfg.hash(),
        cfg.seed,
        cfg.domain,
        out.best_iteration,
        out.best_val_ss,
        out.final_val_ss
    )
}

fn report(out: &AdaptOutcome, dir: &Path) {
    if let StopReason::Diverged { iteration, detail } = &out.stop {
        log::warn!("training diverged at iteration {iteration}: {detail}");
    }
    log::info!(
        "best val SS {:.4} at iteration {}; final val SS {:.4}; outputs in {}",
        out.best_val_ss,
        out.best_iteration,
        out.final_val_ss,
        dir.display()
    );
}

pub fn run_pretrain(a: &PretrainArgs) -> Result<()> {
    let cfg = a.train.load(Vec::new())?;
    require_dir(&cfg.data, "dataset root")?;
    let (train, val) = load_train_val(&cfg)?;
    log::info!(
        "pretraining on {} ({} train / {} val videos), config {}",
        cfg.data.display(),
        train.len(),
        val.len(),
        cfg.hash()
    );
    let out = trainer::pretrain(
        cfg.arch.clone(),
        init_seed(cfg.seed),
        &train,
        &val,
        &cfg.train,
    )?;
    write_text(&cfg.out.join(CONFIG_FILE), &cfg.canonical())?;
    write_text(
        &cfg.out.join("pretrain_log.csv"),
        &out.log.to_csv(&cfg.preamble("pretrain")),
    )?;
    Checkpoint::fresh(out.best.clone(), meta(&cfg, "pretrain", &out, "best"))
        .save(&cfg.out.join(PRETRAINED_FILE))?;
    report(&out, &cfg.out);
    Ok(())
}

pub fn run_adapt(a: &AdaptArgs) -> Result<()> {
    let mut extra = Vec::new();
    if a.rl_only {
        extra.push(("train.mode".into(), Value::String("rl-only".into())));
    }
    if a.kd_only {
        extra.push(("train.mode".into(), Value::String("kd-only".into())));
    }
    let cfg = a.train.load(extra)?;
    require_dir(&cfg.data, "dataset root")?;
    let initial = match &a.pretrained {
        Some(p) => {
            require_file(p, "checkpoint")?;
            let ck = Checkpoint::load(p)?;
            if ck.params.architecture() != &cfg.arch {
                log::warn!("using the architecture stored in {}", p.display());
            }
            Some(ck.params)
        }
        None => None,
    };
    let (train, val) = load_train_val(&cfg)?;

    let runs = a.runs as usize;
    let mut summary = String::from(&cfg.preamble("adapt"));
    summary += "run,seed,best_iteration,best_val_ss,final_val_ss\n";
    let (mut best_sum, mut final_sum) = (0.0, 0.0);
    for r in 0..runs {
        let mut rcfg = cfg.clone();
        rcfg.seed = cfg.seed.wrapping_add(r as u64);
        rcfg.train.seed = rcfg.seed;
        let dir = if runs == 1 {
            cfg.out.clone()
        } else {
            cfg.out.join(format!("run-{}", r + 1))
        };
        let start = match &initial {
            Some(p) => p.clone(),
            None => StudentParams::init(rcfg.arch.clone(), init_seed(rcfg.seed))?,
        };
        log::info!(
            "adapting on {} ({} train / {} val videos), run {}/{runs}, seed {}",
            cfg.data.display(),
            train.len(),
            val.len(),
            r + 1,
            rcfg.seed
        );
        let out = trainer::adapt(start, &train, &val, &rcfg.train)?;
        write_text(&dir.join(CONFIG_FILE), &rcfg.canonical())?;
        write_text(
            &dir.join(LOG_FILE),
            &out.log.to_csv(&rcfg.preamble("adapt")),
        )?;
        Checkpoint::fresh(out.best.clone(), meta(&rcfg, "adapt", &out, "best"))
            .save(&dir.join(BEST_FILE))?;
        Checkpoint::new(
            out.last.clone(),
            out.adam.clone(),
            meta(&rcfg, "adapt", &out, "last"),
        )
        .save(&dir.join(FINAL_FILE))?;
        report(&out, &dir);
        summary += &format!(
            "{},{},{},{:.6},{:.6}\n",
            r + 1,
            rcfg.seed,
            out.best_iteration,
            out.best_val_ss,
            out.final_val_ss
        );
        best_sum += out.best_val_ss;
        final_sum += out.final_val_ss;
    }
    if runs > 1 {
        let n = runs as f64;
        summary += &format!("mean,,,{:.6},{:.6}\n", best_sum / n, final_sum / n);
        write_text(&cfg.out.join("runs.csv"), &summary)?;
        log::info!(
            "mean over {runs} runs: best val SS {:.4}, final val SS {:.4}",
            best_sum / n,
            final_sum / n
        );
    }
    Ok(())
}
