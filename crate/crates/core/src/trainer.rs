//! Adaptation loop: `S` workers interact with training chunks, half of them
//! optimizing the actor-critic loss and half the masked distillation loss;
//! a single coordinator applies their gradients with Adam and keeps the
//! parameters that scored best on the validation split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::student_success;
use crate::geometry::{apply_action, crop_state, invert_action, Action, BBox};
use crate::rlcore::{
    distill_mask, reward, DistillLoss, InteractionRecord, ReturnMode, RlLoss, Step, WeakKind,
    WeakSchedule, WeakSupFn, WorkerMode,
};
use crate::seeds::{self, SeedStream};
use crate::student::{adam_step, sample_action, AdamConfig, AdamState, StudentParams};
use crate::synthworld::{chunk_sequences, maybe_reverse, Video};
use crate::teachers::{select_teacher, teacher_track, SelectionMode, TeacherPool, TeacherProfile};

/// Which losses the workers optimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    /// Even-indexed workers run RL, odd-indexed workers distill.
    #[default]
    Combined,
    RlOnly,
    KdOnly,
}

/// How worker submissions are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Single thread. Each round, every worker starts from the parameters
    /// as they were at the start of the round; updates are applied in
    /// worker order.
    RoundRobin,
    /// Same semantics as `RoundRobin` with the workers of a round computed
    /// on threads. Bit-identical results.
    #[default]
    Parallel,
    /// Free-running worker threads that refresh their snapshot before every
    /// interaction; updates are applied in arrival order. Not reproducible.
    Async,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of workers `S`; even.
    pub workers: usize,
    /// Exploration standard deviation.
    pub sigma: f64,
    pub gamma: f64,
    /// Context factor of the crop window.
    pub chi: f64,
    pub chunk_len: usize,
    /// Chunks drawn per training video.
    pub n_chunks: usize,
    pub reverse_prob: f64,
    pub lr_main: f64,
    pub lr_value_head: f64,
    pub adam: AdamConfig,
    pub weak_kind: WeakKind,
    /// Weak supervision is released every `weak_delay` steps (1 = dense).
    /// Ignored for videos that carry their own weak labels.
    pub weak_delay: usize,
    pub teachers: TeacherPool,
    /// Interaction lengths, advanced every `max_iterations / len` iterations.
    pub curriculum: Vec<usize>,
    pub max_iterations: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub mode: AdaptMode,
    pub schedule: Schedule,
    /// Worker threads; 0 uses all available cores.
    pub jobs: usize,
    pub return_mode: ReturnMode,
    /// Abort with an error on a non-finite loss instead of stopping quietly.
    pub divergence_guard: bool,
    /// Domain name used to look up teacher skills.
    pub domain: String,
    /// Rescale each submitted gradient to at most this L2 norm.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 12,
            sigma: 0.05,
            gamma: 0.99,
            chi: 2.0,
            chunk_len: 32,
            n_chunks: 20,
            reverse_prob: 0.5,
            lr_main: 7.5e-7,
            lr_value_head: 1e-5,
            adam: AdamConfig::default(),
            weak_kind: WeakKind::Iou,
            weak_delay: 1,
            teachers: TeacherPool::default(),
            curriculum: vec![4, 8, 16, 32],
            max_iterations: 5000,
            eval_every: 250,
            patience: 8,
            seed: 0,
            mode: AdaptMode::Combined,
            schedule: Schedule::Parallel,
            jobs: 0,
            return_mode: ReturnMode::Future,
            divergence_guard: true,
            domain: String::new(),
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    /// Settings under which adaptation converges in a few hundred rounds on
    /// a single CPU core. The optimizer defaults above are tuned for far
    /// longer runs of a much larger network.
    pub fn desk() -> Self {
        Self {
            lr_main: 1e-4,
            lr_value_head: 1e-3,
            max_grad_norm: Some(20.0),
            max_iterations: 400,
            eval_every: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.workers < 2 || self.workers % 2 != 0 {
            return bad(format!(
                "workers must be even and >= 2, got {}",
                self.workers
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.chi >= 1.0 && self.chi.is_finite()) {
            return bad(format!("chi must be >= 1, got {}", self.chi));
        }
        if self.chunk_len < 2 || self.n_chunks == 0 {
            return bad("chunk_len must be >= 2 and n_chunks >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.reverse_prob) {
            return bad(format!(
                "reverse_prob must lie in [0, 1], got {}",
                self.reverse_prob
            ));
        }
        for (lr, n) in [
            (self.lr_main, "lr_main"),
            (self.lr_value_head, "lr_value_head"),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{n} must be finite and >= 0, got {lr}"));
            }
        }
        if self.weak_delay == 0 {
            return bad("weak_delay must be >= 1".into());
        }
        if self.curriculum.is_empty() || self.curriculum.contains(&0) {
            return bad("curriculum must be a non-empty list of positive lengths".into());
        }
        if self.curriculum.windows(2).any(|w| w[1] < w[0]) {
            return bad("curriculum must be non-decreasing".into());
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("max_grad_norm must be > 0, got {c}"));
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        self.teachers.validate()
    }

    pub fn worker_mode(&self, worker: usize) -> WorkerMode {
        match self.mode {
            AdaptMode::Combined if worker % 2 == 0 => WorkerMode::Rl,
            AdaptMode::Combined | AdaptMode::KdOnly => WorkerMode::Kd,
            AdaptMode::RlOnly => WorkerMode::Rl,
        }
    }

    fn threads(&self) -> usize {
        let avail = thread::available_parallelism().map_or(1, |n| n.get());
        let j = if self.jobs == 0 { avail } else { self.jobs };
        j.clamp(1, self.workers)
    }

    /// Weak supervision for a chunk: its own labels when present, otherwise
    /// the configured kind and delay.
    pub fn weak_fn(&self, chunk: &Video) -> WeakSupFn {
        match &chunk.weak_labels {
            Some(labels) => WeakSupFn {
                kind: self.weak_kind,
                schedule: WeakSchedule::Explicit(labels.clone()),
            },
            None => WeakSupFn {
                kind: self.weak_kind,
                schedule: WeakSchedule::Every(self.weak_delay),
            },
        }
    }
}

/// Configuration for source-domain pretraining: the same machinery, with
/// an exact teacher and dense IoU supervision.
pub fn pretraining_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        teachers: TeacherPool {
            teachers: vec![TeacherProfile::oracle("ground-truth")],
            selection_mode: SelectionMode::QualityArgmax,
        },
        weak_kind: WeakKind::Iou,
        weak_delay: 1,
        ..base.clone()
    }
}

/// Interaction length at a 0-based iteration.
pub fn curriculum_length(iteration: usize, cfg: &TrainConfig) -> usize {
    let n = cfg.curriculum.len().max(1);
    let stage_len = (cfg.max_iterations / n).max(1);
    let stage = (iteration / stage_len).min(n - 1);
    cfg.curriculum
        .get(stage)
        .copied()
        .unwrap_or(1)
        .min(cfg.chunk_len)
}

/// A teacher's predictions over a chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherRun {
    pub name: String,
    pub track: Vec<BBox>,
}

/// Runs the student on `chunk` from `b_0 = g_0` for up to `t_max` steps
/// (bounded by the chunk length), recording everything the losses need.
/// RL workers sample actions around `μ`; KD workers act with `μ` itself.
pub fn run_interaction(
    params: &StudentParams,
    chunk: &Video,
    mode: WorkerMode,
    teacher: &TeacherRun,
    weak: &WeakSupFn,
    t_max: usize,
    cfg: &TrainConfig,
    rng: &mut SeedStream,
) -> Result<InteractionRecord> {
    if chunk.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "chunk {} has fewer than 2 frames",
            chunk.id
        )));
    }
    if teacher.track.len() != chunk.len() {
        return Err(Error::DimensionMismatch {
            expected: chunk.len(),
            got: teacher.track.len(),
        });
    }
    let steps_n = t_max.min(chunk.len() - 1);
    let size = params.architecture().patch;
    let mut memory = params.initial_memory();
    let mut prev = chunk.gt[0];
    let mut steps = Vec::with_capacity(steps_n);
    for t in 1..=steps_n {
        let state = crop_state(&chunk.frames[t - 1], &chunk.frames[t], &prev, cfg.chi, size)?;
        let out = params.forward(&state, &memory)?;
        let (raw, action) = match mode {
            WorkerMode::Rl => sample_action(&out.mu, cfg.sigma, rng)?,
            WorkerMode::Kd => (out.mu, Action::from_array(out.mu)),
        };
        let b = apply_action(&prev, &action);
        let g = &chunk.gt[t];
        let z = weak.score(t, &b, g)?;
        let r = reward(z);
        let bt = teacher.track[t];
        let rt = reward(weak.score(t, &bt, g)?);
        steps.push(Step {
            state,
            raw_action: raw,
            action,
            mu: out.mu,
            value: out.value,
            reward: r,
            weak_score: z.map(|s| s.get()),
            student_box: b,
            teacher_box: bt,
            teacher_action: invert_action(&prev, &bt)?,
            teacher_reward: rt,
            mask: distill_mask(rt, r),
        });
        memory = out.memory;
        prev = b;
    }
    Ok(InteractionRecord {
        mode,
        video_id: chunk.id.clone(),
        teacher: teacher.name.clone(),
        steps,
    })
}

/// Training chunks: `n_chunks` windows per video (whole videos when shorter
/// than `chunk_len`).
pub fn build_chunk_pool(train: &[Video], cfg: &TrainConfig) -> Result<Vec<Video>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training videos".into()));
    }
    let mut pool = Vec::with_capacity(train.len() * cfg.n_chunks);
    for (i, v) in train.iter().enumerate() {
        if v.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "training video {} has fewer than 2 frames",
                v.id
            )));
        }
        let seed = seeds::derive(cfg.seed, &[seeds::label("chunk-pool"), i as u64]);
        pool.extend(chunk_sequences(
            v,
            cfg.chunk_len.min(v.len()),
            cfg.n_chunks,
            seed,
        )?);
    }
    Ok(pool)
}

/// One worker's contribution: a gradient computed on a parameter snapshot.
#[derive(Clone, Debug)]
pub struct Submission {
    pub worker: usize,
    pub mode: WorkerMode,
    pub loss: f64,
    pub grad: Vec<f64>,
    /// L2 norm of the gradient before any clipping.
    pub grad_norm: f64,
    pub teacher: String,
    pub kd_gap: Option<f64>,
}

enum WorkOutcome {
    Done(Submission),
    /// Non-finite loss or gradient.
    Diverged(String),
}

/// Draws a chunk, picks a teacher, interacts and differentiates the loss of
/// the worker's mode. All randomness comes from `work_seed`.
fn work(
    params: &StudentParams,
    pool: &[Video],
    cfg: &TrainConfig,
    worker: usize,
    t_max: usize,
    work_seed: u64,
) -> Result<WorkOutcome> {
    let mut rng = SeedStream::new(work_seed);
    let chunk = maybe_reverse(
        &pool[rng.index(pool.len())],
        cfg.reverse_prob,
        rng.next_seed(),
    );
    let weak = cfg.weak_fn(&chunk);
    let index = match select_teacher(&cfg.teachers, &chunk, &weak, &cfg.domain, cfg.seed) {
        Ok(sel) => sel.index,
        Err(Error::NoWeakLabels(_)) => 0,
        Err(e) => return Err(e),
    };
    let profile = &cfg.teachers.teachers[index];
    let teacher = TeacherRun {
        name: profile.name.clone(),
        track: teacher_track(profile, &chunk, &cfg.domain, cfg.seed),
    };
    let mode = cfg.worker_mode(worker);
    let rec = match run_interaction(params, &chunk, mode, &teacher, &weak, t_max, cfg, &mut rng) {
        Ok(rec) => rec,
        Err(Error::NonFinite(what)) => {
            return Ok(WorkOutcome::Diverged(format!(
                "non-finite {what} from worker {worker} ({mode:?}) on {}",
                chunk.id
            )))
        }
        Err(e) => return Err(e),
    };
    let states = rec.states();
    let memory = params.initial_memory();
    let result = match mode {
        WorkerMode::Rl => {
            let loss = RlLoss::new(&rec, cfg.sigma, cfg.gamma, cfg.return_mode)?;
            params.gradient(&states, &memory, &loss)
        }
        WorkerMode::Kd => params.gradient(&states, &memory, &DistillLoss::new(&rec)),
    };
    match result {
        Ok((loss, mut grad)) => {
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if let Some(c) = cfg.max_grad_norm {
                if grad_norm > c {
                    let k = c / grad_norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            Ok(WorkOutcome::Done(Submission {
                worker,
                mode,
                loss,
                grad,
                grad_norm,
                teacher: teacher.name,
                kd_gap: (mode == WorkerMode::Kd)
                    .then(|| rec.masked_action_gap())
                    .flatten(),
            }))
        }
        Err(Error::NonFinite(what)) => Ok(WorkOutcome::Diverged(format!(
            "non-finite {what} from worker {worker} ({:?}) on {}",
            mode, chunk.id
        ))),
        Err(e) => Err(e),
    }
}

fn work_seed(cfg: &TrainConfig, iteration: usize, worker: usize) -> u64 {
    seeds::derive(
        cfg.seed,
        &[seeds::label("work"), iteration as u64, worker as u64],
    )
}

/// One row of the training log. Losses are means over the round's
/// submissions of each mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Completed rounds; row 0 holds the evaluation of the initial parameters.
    pub iteration: usize,
    pub loss_rl: Option<f64>,
    pub loss_kd: Option<f64>,
    pub val_ss: Option<f64>,
    pub val_ps: Option<f64>,
    pub t_max: usize,
    pub teacher_chosen: BTreeMap<String, usize>,
    /// Mean masked distance `|a_T - μ|_1` over the round's KD submissions.
    pub kd_gap: Option<f64>,
}

pub const LOG_HEADER: &str = "iteration,loss_rl,loss_kd,val_ss,val_ps,t_max,teacher_chosen";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

impl TrainLog {
    /// CSV text; `preamble` lines (e.g. `# config_hash=...`) go first.
    pub fn to_csv(&self, preamble: &str) -> String {
        let mut s = String::from(preamble);
        s += LOG_HEADER;
        s.push('\n');
        for r in &self.rows {
            let teachers: Vec<String> = r
                .teacher_chosen
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.iteration,
                opt(r.loss_rl),
                opt(r.loss_kd),
                opt(r.val_ss),
                opt(r.val_ps),
                r.t_max,
                teachers.join(";")
            );
        }
        s
    }

    /// Parses [`TrainLog::to_csv`] output. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let err = |detail: String| Error::Parse {
                what: "training log",
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != LOG_HEADER {
                    return Err(err(format!("expected header '{LOG_HEADER}'")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| err(format!("{s:?}: {e}")))
                }
            };
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let mut teacher_chosen = BTreeMap::new();
            for part in f[6].split(';').filter(|p| !p.is_empty()) {
                let (k, v) = part
                    .rsplit_once(':')
                    .ok_or_else(|| err(format!("bad teacher count {part:?}")))?;
                teacher_chosen.insert(k.to_string(), int(v)?);
            }
            rows.push(LogRow {
                iteration: int(f[0])?,
                loss_rl: num(f[1])?,
                loss_kd: num(f[2])?,
                val_ss: num(f[3])?,
                val_ps: num(f[4])?,
                t_max: int(f[5])?,
                teacher_chosen,
                kd_gap: None,
            });
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                what: "training log",
                path: path.to_path_buf(),
                line: text.lines().count(),
                detail: "no data rows".into(),
            });
        }
        Ok(Self { rows })
    }

    /// `(iteration, val_ss)` for every evaluated row.
    pub fn validation_curve(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.val_ss.map(|s| (r.iteration, s)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Completed,
    EarlyStop,
    /// Only produced when the divergence guard is off.
    Diverged {
        iteration: usize,
        detail: String,
    },
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    /// Parameters with the best validation success score seen.
    pub best: StudentParams,
    pub best_val_ss: f64,
    pub best_iteration: usize,
    /// Parameters and optimizer state when training stopped.
    pub last: StudentParams,
    pub adam: AdamState,
    /// Validation success score of `last`.
    pub final_val_ss: f64,
    pub log: TrainLog,
    pub stop: StopReason,
}

/// Coordinator state shared by all schedules.
struct Coordinator<'a> {
    cfg: &'a TrainConfig,
    val: &'a [Video],
    params: StudentParams,
    adam: AdamState,
    best: StudentParams,
    best_ss: f64,
    best_iteration: usize,
    last_eval: Option<(usize, f64)>,
    stale_evals: usize,
    log: TrainLog,
}

enum Next {
    Continue,
    Stop(StopReason),
}

impl<'a> Coordinator<'a> {
    fn new(
        cfg: &'a TrainConfig,
        val: &'a [Video],
        initial: StudentParams,
        adam: AdamState,
    ) -> Result<Self> {
        let (ss, ps) = student_success(&initial, cfg.chi, val)?;
        info!("initial validation: ss={ss:.4} ps={ps:.4}");
        Ok(Self {
            cfg,
            val,
            best: initial.clone(),
            params: initial,
            adam,
            best_ss: ss,
            best_iteration: 0,
            last_eval: Some((0, ss)),
            stale_evals: 0,
            log: TrainLog {
                rows: vec![LogRow {
                    iteration: 0,
                    loss_rl: None,
                    loss_kd: None,
                    val_ss: Some(ss),
                    val_ps: Some(ps),
                    t_max: curriculum_length(0, cfg),
                    teacher_chosen: BTreeMap::new(),
                    kd_gap: None,
                }],
            },
        })
    }

    fn apply(&mut self, sub: &Submission) -> Result<bool> {
        match adam_step(
            &mut self.params,
            &sub.grad,
            &mut self.adam,
            &self.cfg.adam,
            self.cfg.lr_main,
            self.cfg.lr_value_head,
        ) {
            Ok(()) => Ok(true),
            Err(Error::NonFinite(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn diverged(&mut self, round: usize, detail: String) -> Result<Next> {
        if self.cfg.divergence_guard {
            return Err(Error::Diverged {
                iteration: round,
                detail,
            });
        }
        warn!("diverged at iteration {round}: {detail}");
        Ok(Next::Stop(StopReason::Diverged {
            iteration: round,
            detail,
        }))
    }

    /// Applies one round of submissions (in the given order), logs it and
    /// evaluates when due. `round` is 0-based.
    fn finish_round(
        &mut self,
        round: usize,
        t_max: usize,
        subs: Vec<WorkOutcome>,
        applied: bool,
    ) -> Result<Next> {
        let mut rl = Vec::new();
        let mut kd = Vec::new();
        let mut gaps = Vec::new();
        let mut teacher_chosen = BTreeMap::new();
        for outcome in subs {
            let sub = match outcome {
                WorkOutcome::Done(s) => s,
                WorkOutcome::Diverged(detail) => return self.diverged(round + 1, detail),
            };
            if !applied && !self.apply(&sub)? {
                return self.diverged(
                    round + 1,
                    format!("non-finite gradient from worker {}", sub.worker),
                );
            }
            match sub.mode {
                WorkerMode::Rl => rl.push(sub.loss),
                WorkerMode::Kd => kd.push(sub.loss),
            }
            gaps.extend(sub.kd_gap);
            debug!(
                "worker {} {:?}: loss {:.4} |grad| {:.4e}",
                sub.worker, sub.mode, sub.loss, sub.grad_norm
            );
            *teacher_chosen.entry(sub.teacher).or_insert(0) += 1;
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let iteration = round + 1;
        let mut row = LogRow {
            iteration,
            loss_rl: mean(&rl),
            loss_kd: mean(&kd),
            val_ss: None,
            val_ps: None,
            t_max,
            teacher_chosen,
            kd_gap: mean(&gaps),
        };
        let last = iteration >= self.cfg.max_iterations;
        let mut next = Next::Continue;
        if iteration % self.cfg.eval_every == 0 || last {
            let (ss, ps) = student_success(&self.params, self.cfg.chi, self.val)?;
            info!(
                "iteration {iteration}: val ss={ss:.4} ps={ps:.4} t_max={t_max} loss_rl={:?} loss_kd={:?}",
                row.loss_rl, row.loss_kd
            );
            row.val_ss = Some(ss);
            row.val_ps = Some(ps);
            self.last_eval = Some((iteration, ss));
            if ss > self.best_ss {
                self.best_ss = ss;
                self.best = self.params.clone();
                self.best_iteration = iteration;
                self.stale_evals = 0;
            } else {
                self.stale_evals += 1;
                if self.stale_evals >= self.cfg.patience {
                    info!(
                        "no improvement for {} evaluations, stopping",
                        self.stale_evals
                    );
                    next = Next::Stop(StopReason::EarlyStop);
                }
            }
        } else {
            debug!(
                "iteration {iteration}: loss_rl={:?} loss_kd={:?}",
                row.loss_rl, row.loss_kd
            );
        }
        self.log.rows.push(row);
        Ok(next)
    }

    fn finish(mut self, stop: StopReason) -> Result<AdaptOutcome> {
        let diverged = matches!(stop, StopReason::Diverged { .. });
        let last_row = self.log.rows.last().map_or(0, |r| r.iteration);
        let final_val_ss = match self.last_eval {
            Some((it, ss)) if it == last_row && !diverged => ss,
            _ => match student_success(&self.params, self.cfg.chi, self.val) {
                // parameters that no longer produce finite boxes track nothing
                Err(e) if diverged => {
                    warn!("diverged parameters cannot be evaluated: {e}");
                    0.0
                }
                Err(e) => return Err(e),
                Ok((ss, ps)) => {
                    if !diverged {
                        if let Some(r) = self.log.rows.last_mut() {
                            r.val_ss = Some(ss);
                            r.val_ps = Some(ps);
                        }
                        if ss > self.best_ss {
                            self.best_ss = ss;
                            self.best = self.params.clone();
                            self.best_iteration = last_row;
                        }
                    }
                    ss
                }
            },
        };
        Ok(AdaptOutcome {
            best: self.best,
            best_val_ss: self.best_ss,
            best_iteration: self.best_iteration,
            last: self.params,
            adam: self.adam,
            final_val_ss,
            log: self.log,
            stop,
        })
    }
}

/// Adapts `initial` on `train`, selecting on `val`. `adam` resumes an
/// optimizer state; `None` starts fresh.
pub fn adapt_with_state(
    initial: StudentParams,
    adam: Option<AdamState>,
    train: &[Video],
    val: &[Video],
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::InvalidArgument("no validation videos".into()));
    }
    let adam = adam.unwrap_or_else(|| AdamState::new(initial.len()));
    if adam.m.len() != initial.len() {
        return Err(Error::DimensionMismatch {
            expected: initial.len(),
            got: adam.m.len(),
        });
    }
    if cfg.max_iterations == 0 {
        let val_ss = student_success(&initial, cfg.chi, val)?.0;
        return Ok(AdaptOutcome {
            best: initial.clone(),
            best_val_ss: val_ss,
            best_iteration: 0,
            last: initial,
            adam,
            final_val_ss: val_ss,
            log: TrainLog::default(),
            stop: StopReason::Completed,
        });
    }
    let pool = build_chunk_pool(train, cfg)?;
    let coord = Coordinator::new(cfg, val, initial, adam)?;
    match cfg.schedule {
        Schedule::RoundRobin | Schedule::Parallel => run_rounds(coord, &pool),
        Schedule::Async => run_async(coord, &pool),
    }
}

pub fn adapt(
    initial: StudentParams,
    train: &[Video],
    val: &[Video],
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    adapt_with_state(initial, None, train, val, cfg)
}

/// Source-domain pretraining of freshly initialized parameters.
pub fn pretrain(
    arch: crate::student::Architecture,
    init_seed: u64,
    train: &[Video],
    val: &[Video],
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    let params = StudentParams::init(arch, init_seed)?;
    adapt(params, train, val, &pretraining_config(cfg))
}

/// `adapt` with every worker in RL mode.
pub fn rl_only_adapt(
    initial: StudentParams,
    train: &[Video],
    val: &[Video],
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    let cfg = TrainConfig {
        mode: AdaptMode::RlOnly,
        ..cfg.clone()
    };
    adapt(initial, train, val, &cfg)
}

/// `adapt` with every worker in distillation mode.
pub fn kd_only_adapt(
    initial: StudentParams,
    train: &[Video],
    val: &[Video],
    cfg: &TrainConfig,
) -> Result<AdaptOutcome> {
    let cfg = TrainConfig {
        mode: AdaptMode::KdOnly,
        ..cfg.clone()
    };
    adapt(initial, train, val, &cfg)
}

fn run_rounds(mut coord: Coordinator<'_>, pool: &[Video]) -> Result<AdaptOutcome> {
    let cfg = coord.cfg;
    let threads = if cfg.schedule == Schedule::RoundRobin {
        1
    } else {
        cfg.threads()
    };
    for round in 0..cfg.max_iterations {
        let t_max = curriculum_length(round, cfg);
        let snapshot = &coord.params;
        let job = |w: usize| work(snapshot, pool, cfg, w, t_max, work_seed(cfg, round, w));
        let outcomes: Vec<Result<WorkOutcome>> = if threads == 1 {
            (0..cfg.workers).map(job).collect()
        } else {
            let mut slots: Vec<Option<Result<WorkOutcome>>> =
                (0..cfg.workers).map(|_| None).collect();
            thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|j| {
                        let job = &job;
                        s.spawn(move || {
                            (j..cfg.workers)
                                .step_by(threads)
                                .map(|w| (w, job(w)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (w, r) in h.join().expect("worker thread panicked") {
                        slots[w] = Some(r);
                    }
                }
            });
            slots
                .into_iter()
                .map(|s| s.expect("every worker ran"))
                .collect()
        };
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        if let Next::Stop(reason) = coord.finish_round(round, t_max, outcomes, false)? {
            return coord.finish(reason);
        }
    }
    coord.finish(StopReason::Completed)
}

fn run_async(mut coord: Coordinator<'_>, pool: &[Video]) -> Result<AdaptOutcome> {
    let cfg = coord.cfg;
    let threads = cfg.threads();
    let shared = RwLock::new(Arc::new(coord.params.clone()));
    let round_now = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<WorkOutcome>>();
    thread::scope(|s| {
        for j in 0..threads {
            let tx = tx.clone();
            let (shared, round_now, stop) = (&shared, &round_now, &stop);
            s.spawn(move || {
                let ids: Vec<usize> = (j..cfg.workers).step_by(threads).collect();
                let mut k = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let w = ids[k as usize % ids.len()];
                    let snapshot = Arc::clone(&shared.read().expect("lock poisoned"));
                    let t_max = curriculum_length(round_now.load(Ordering::Relaxed), cfg);
                    let seed = seeds::derive(cfg.seed, &[seeds::label("async"), j as u64, k]);
                    k += 1;
                    if tx.send(work(&snapshot, pool, cfg, w, t_max, seed)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let result = (|| {
            for round in 0..cfg.max_iterations {
                round_now.store(round, Ordering::Relaxed);
                let t_max = curriculum_length(round, cfg);
                let mut subs = Vec::with_capacity(cfg.workers);
                for _ in 0..cfg.workers {
                    let outcome = rx.recv().expect("workers alive")?;
                    // apply immediately so later interactions see the update
                    let outcome = match outcome {
                        WorkOutcome::Done(sub) => {
                            if !coord.apply(&sub)? {
                                return Ok(Some(
                                    coord.diverged(round + 1, "non-finite gradient".into())?,
                                ));
                            }
                            *shared.write().expect("lock poisoned") =
                                Arc::new(coord.params.clone());
                            WorkOutcome::Done(Submission {
                                grad: Vec::new(),
                                ..sub
                            })
                        }
                        d @ WorkOutcome::Diverged(_) => d,
                    };
                    subs.push(outcome);
                }
                let next = coord.finish_round(round, t_max, subs, true)?;
                if let Next::Stop(reason) = next {
                    return Ok(Some(Next::Stop(reason)));
                }
            }
            Ok(None)
        })();
        stop.store(true, Ordering::Relaxed);
        match result {
            Ok(Some(Next::Stop(reason))) => Ok(reason),
            Ok(_) => Ok(StopReason::Completed),
            Err(e) => Err(e),
        }
    })
    .and_then(|reason| coord.finish(reason))
}
