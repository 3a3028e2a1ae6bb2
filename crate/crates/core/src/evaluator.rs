//! One-pass evaluation: trackers are initialized with the first ground-truth
//! box and never reset. Frame 0 is excluded from every metric.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{apply_action, center_distance, crop_state, iou, BBox};
use crate::seeds::SeedStream;
use crate::student::{Memory, StudentParams};
use crate::synthworld::Video;
use crate::teachers::{teacher_predict, teacher_seed, TeacherProfile, TeacherState};

/// Success-plot thresholds: `{0.00, 0.02, ..., 0.98}`, compared with `IoU > τ`.
pub fn iou_thresholds() -> Vec<f64> {
    (0..50).map(|i| i as f64 / 50.0).collect()
}

/// Precision-plot thresholds: `{0, 1, ..., 50}` px, compared with `dist <= d`.
pub fn distance_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

/// Conventional single-threshold precision reported alongside the AUC.
pub const PRECISION_AT: f64 = 20.0;

pub trait Tracker {
    fn name(&self) -> String;
    /// Resets internal state for a new video; the first box is `v.gt[0]`.
    fn init(&mut self, v: &Video) -> Result<()>;
    /// Box for frame `t >= 1`. Called once per frame in increasing order.
    fn update(&mut self, v: &Video, t: usize) -> Result<BBox>;
}

/// Emits the ground truth.
#[derive(Clone, Debug, Default)]
pub struct OracleTracker;

impl Tracker for OracleTracker {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn init(&mut self, _: &Video) -> Result<()> {
        Ok(())
    }

    fn update(&mut self, v: &Video, t: usize) -> Result<BBox> {
        Ok(v.gt[t])
    }
}

/// Never moves from the initial box.
#[derive(Clone, Debug, Default)]
pub struct StayTracker {
    first: Option<BBox>,
}

impl Tracker for StayTracker {
    fn name(&self) -> String {
        "stay".into()
    }

    fn init(&mut self, v: &Video) -> Result<()> {
        self.first = v.gt.first().copied();
        Ok(())
    }

    fn update(&mut self, _: &Video, _: usize) -> Result<BBox> {
        self.first.ok_or(Error::EmptyFrame)
    }
}

/// A scripted teacher run as an ordinary tracker.
#[derive(Clone, Debug)]
pub struct TeacherTracker {
    profile: TeacherProfile,
    domain: String,
    seed: u64,
    state: TeacherState,
    rng: SeedStream,
}

impl TeacherTracker {
    pub fn new(profile: TeacherProfile, domain: impl Into<String>, seed: u64) -> Self {
        Self {
            profile,
            domain: domain.into(),
            seed,
            state: TeacherState::new(),
            rng: SeedStream::new(seed),
        }
    }
}

impl Tracker for TeacherTracker {
    fn name(&self) -> String {
        format!("teacher:{}", self.profile.name)
    }

    fn init(&mut self, v: &Video) -> Result<()> {
        self.state = TeacherState::new();
        self.rng = SeedStream::new(teacher_seed(&self.profile, &v.id, self.seed));
        teacher_predict(
            &self.profile,
            &v.gt[0],
            &self.domain,
            &mut self.state,
            &mut self.rng,
        );
        Ok(())
    }

    fn update(&mut self, v: &Video, t: usize) -> Result<BBox> {
        Ok(teacher_predict(
            &self.profile,
            &v.gt[t],
            &self.domain,
            &mut self.state,
            &mut self.rng,
        ))
    }
}

/// The student tracking loop with deterministic actions `a_t = μ`.
#[derive(Clone, Debug)]
pub struct StudentTracker {
    params: StudentParams,
    chi: f64,
    label: String,
    memory: Memory,
    prev: Option<BBox>,
}

impl StudentTracker {
    pub fn new(params: StudentParams, chi: f64) -> Self {
        let memory = params.initial_memory();
        Self {
            params,
            chi,
            label: "student".into(),
            memory,
            prev: None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.label = name.into();
        self
    }
}

impl Tracker for StudentTracker {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn init(&mut self, v: &Video) -> Result<()> {
        self.memory = self.params.initial_memory();
        self.prev = Some(*v.gt.first().ok_or(Error::EmptyFrame)?);
        Ok(())
    }

    fn update(&mut self, v: &Video, t: usize) -> Result<BBox> {
        let prev = self.prev.ok_or(Error::EmptyFrame)?;
        let size = self.params.architecture().patch;
        let s = crop_state(&v.frames[t - 1], &v.frames[t], &prev, self.chi, size)?;
        let out = self.params.forward(&s, &self.memory)?;
        let b = apply_action(&prev, &out.action_mean());
        self.memory = out.memory;
        self.prev = Some(b);
        Ok(b)
    }
}

/// Output of one OPE pass.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackRun {
    pub video_id: String,
    pub preds: Vec<BBox>,
    /// Wall-clock seconds spent in `update` per frame; 0 for frame 0.
    pub frame_secs: Vec<f64>,
}

impl TrackRun {
    pub fn fps(&self) -> f64 {
        fps_over(&self.frame_secs[1.min(self.frame_secs.len())..])
    }
}

fn fps_over(secs: &[f64]) -> f64 {
    let total: f64 = secs.iter().sum();
    secs.len() as f64 / total.max(1e-9)
}

pub fn run_ope<T: Tracker + ?Sized>(tracker: &mut T, v: &Video) -> Result<TrackRun> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "video {} has {} frames; evaluation needs at least 2",
            v.id,
            v.len()
        )));
    }
    let fail = |tracker: &T, frame: usize, e: Error| Error::TrackerFailure {
        tracker: tracker.name(),
        frame,
        detail: format!("{} on video {}: {e}", e.kind(), v.id),
    };
    tracker.init(v).map_err(|e| fail(tracker, 0, e))?;
    let mut preds = Vec::with_capacity(v.len());
    let mut frame_secs = Vec::with_capacity(v.len());
    preds.push(v.gt[0]);
    frame_secs.push(0.0);
    for t in 1..v.len() {
        let start = Instant::now();
        let b = tracker.update(v, t).map_err(|e| fail(tracker, t, e))?;
        frame_secs.push(start.elapsed().as_secs_f64());
        b.validate().map_err(|e| fail(tracker, t, e))?;
        preds.push(b);
    }
    Ok(TrackRun {
        video_id: v.id.clone(),
        preds,
        frame_secs,
    })
}

/// Frames per second over the frames after the first `warmup` updates.
pub fn measure_fps<T: Tracker + ?Sized>(tracker: &mut T, v: &Video, warmup: usize) -> Result<f64> {
    if v.len() <= warmup + 1 {
        return Err(Error::InvalidArgument(format!(
            "video of {} frames is too short for {warmup} warm-up frames",
            v.len()
        )));
    }
    let run = run_ope(tracker, v)?;
    Ok(fps_over(&run.frame_secs[1 + warmup..]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub ss: f64,
    pub ps: f64,
    pub fps: f64,
    /// `(τ, fraction of frames with IoU > τ)`.
    pub success: Vec<(f64, f64)>,
    /// `(d, fraction of frames with center distance <= d)`.
    pub precision: Vec<(f64, f64)>,
    pub frames: usize,
}

impl Metrics {
    pub fn precision_at(&self, d: f64) -> Option<f64> {
        self.precision.iter().find(|(x, _)| *x == d).map(|p| p.1)
    }
}

fn curve(
    values: &[f64],
    thresholds: &[f64],
    pass: impl Fn(f64, f64) -> bool,
) -> (Vec<(f64, f64)>, f64) {
    let n = values.len() as f64;
    let c: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            (
                th,
                values.iter().filter(|&&v| pass(v, th)).count() as f64 / n,
            )
        })
        .collect();
    let auc = c.iter().map(|p| p.1).sum::<f64>() / c.len() as f64;
    (c, auc)
}

fn check_lengths(preds: &[BBox], gts: &[BBox]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            expected: gts.len(),
            got: preds.len(),
        });
    }
    Ok(())
}

/// Frames scored with ground truth released every `k`-th frame, counting the
/// initial frame as the first: `t` is kept when `(t + 1) % k == 0`, `t > 0`.
pub fn sparse_frames(len: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("sparse stride must be >= 1".into()));
    }
    let frames: Vec<usize> = (1..len).filter(|t| (t + 1) % k == 0).collect();
    if frames.is_empty() {
        return Err(Error::NoEvaluatedFrames {
            stride: k,
            frames: len,
        });
    }
    Ok(frames)
}

/// Success curve and score over frames `1..`.
pub fn success_score(preds: &[BBox], gts: &[BBox]) -> Result<(f64, Vec<(f64, f64)>)> {
    check_lengths(preds, gts)?;
    let frames = sparse_frames(gts.len(), 1)?;
    success_on(preds, gts, &frames)
}

/// Precision curve and score over frames `1..`.
pub fn precision_score(preds: &[BBox], gts: &[BBox]) -> Result<(f64, Vec<(f64, f64)>)> {
    check_lengths(preds, gts)?;
    let frames = sparse_frames(gts.len(), 1)?;
    Ok(precision_on(preds, gts, &frames))
}

fn success_on(preds: &[BBox], gts: &[BBox], frames: &[usize]) -> Result<(f64, Vec<(f64, f64)>)> {
    let ious = frames
        .iter()
        .map(|&t| iou(&preds[t], &gts[t]))
        .collect::<Result<Vec<_>>>()?;
    let (c, auc) = curve(&ious, &iou_thresholds(), |v, th| v > th);
    Ok((auc, c))
}

fn precision_on(preds: &[BBox], gts: &[BBox], frames: &[usize]) -> (f64, Vec<(f64, f64)>) {
    let d: Vec<f64> = frames
        .iter()
        .map(|&t| center_distance(&preds[t], &gts[t]))
        .collect();
    let (c, auc) = curve(&d, &distance_thresholds(), |v, th| v <= th);
    (auc, c)
}

/// Metrics on the frames of [`sparse_frames`]; `k = 1` is the dense protocol.
pub fn sparse_eval(run: &TrackRun, gts: &[BBox], k: usize) -> Result<Metrics> {
    check_lengths(&run.preds, gts)?;
    let frames = sparse_frames(gts.len(), k)?;
    let (ss, success) = success_on(&run.preds, gts, &frames)?;
    let (ps, precision) = precision_on(&run.preds, gts, &frames);
    Ok(Metrics {
        ss,
        ps,
        fps: run.fps(),
        success,
        precision,
        frames: frames.len(),
    })
}

pub fn evaluate(run: &TrackRun, gts: &[BBox]) -> Result<Metrics> {
    sparse_eval(run, gts, 1)
}

/// Unweighted mean over videos, curves averaged pointwise.
pub fn mean_metrics(all: &[Metrics]) -> Result<Metrics> {
    let first = all
        .first()
        .ok_or_else(|| Error::InvalidArgument("no metrics to aggregate".into()))?;
    let n = all.len() as f64;
    let avg = |f: &dyn Fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    let avg_curve = |get: &dyn Fn(&Metrics) -> &Vec<(f64, f64)>| {
        (0..get(first).len())
            .map(|i| {
                (
                    get(first)[i].0,
                    all.iter().map(|m| get(m)[i].1).sum::<f64>() / n,
                )
            })
            .collect()
    };
    Ok(Metrics {
        ss: avg(&|m| m.ss),
        ps: avg(&|m| m.ps),
        fps: avg(&|m| m.fps),
        success: avg_curve(&|m| &m.success),
        precision: avg_curve(&|m| &m.precision),
        frames: all.iter().map(|m| m.frames).sum(),
    })
}

/// Runs `tracker` over every video and returns per-video and mean metrics.
pub fn evaluate_videos<T: Tracker + ?Sized>(
    tracker: &mut T,
    videos: &[Video],
    sparse_k: usize,
) -> Result<(Vec<(String, Metrics)>, Metrics)> {
    let per = videos
        .iter()
        .map(|v| {
            let run = run_ope(tracker, v)?;
            Ok((v.id.clone(), sparse_eval(&run, &v.gt, sparse_k)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = per.iter().map(|p| p.1.clone()).collect();
    let mean = mean_metrics(&metrics)?;
    Ok((per, mean))
}

/// Mean dense success score of a student over videos; used for validation.
pub fn student_success(params: &StudentParams, chi: f64, videos: &[Video]) -> Result<(f64, f64)> {
    let mut tracker = StudentTracker::new(params.clone(), chi);
    let (_, mean) = evaluate_videos(&mut tracker, videos, 1)?;
    Ok((mean.ss, mean.ps))
}

pub fn results_csv(header: &str, rows: &[(String, Metrics)], mean: &Metrics) -> String {
    let mut s = format!("{header}video,ss,ps,fps\n");
    for (id, m) in rows {
        s += &format!("{id},{:.6},{:.6},{:.3}\n", m.ss, m.ps, m.fps);
    }
    s += &format!("mean,{:.6},{:.6},{:.3}\n", mean.ss, mean.ps, mean.fps);
    s
}

pub fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("{header}threshold,fraction\n");
    for (x, y) in points {
        s += &format!("{x},{y:.6}\n");
    }
    s
}
