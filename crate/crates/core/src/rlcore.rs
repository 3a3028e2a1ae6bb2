//! Weak supervision, reward shaping, discounted returns and the three
//! adaptation losses (policy, value, masked distillation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, norm_dist_score, Action, BBox, State};
use crate::student::{HeadOutput, LossEval, TrajectoryLoss};

/// Form of the 0-1 weak supervision function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeakKind {
    Iou,
    #[serde(alias = "dist")]
    NormDist,
}

impl WeakKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "iou" => Ok(WeakKind::Iou),
            "dist" | "normdist" => Ok(WeakKind::NormDist),
            other => Err(Error::InvalidArgument(format!(
                "unknown weak supervision kind '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeakKind::Iou => "iou",
            WeakKind::NormDist => "dist",
        }
    }

    pub fn score(self, b: &BBox, reference: &BBox) -> Result<WeakScore> {
        let z = match self {
            WeakKind::Iou => iou(b, reference)?,
            WeakKind::NormDist => norm_dist_score(b, reference)?,
        };
        WeakScore::new(z)
    }
}

/// When the weak supervision function is defined.
#[derive(Clone, Debug, PartialEq)]
pub enum WeakSchedule {
    /// Defined at step `t` iff `t % k == 0`.
    Every(usize),
    /// Defined exactly on the listed steps, each with its own kind.
    Explicit(Vec<(usize, WeakKind)>),
}

/// Weak supervision: a 0-1 score of a predicted box against the stored
/// reference, available only on the steps its schedule allows.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakSupFn {
    pub kind: WeakKind,
    pub schedule: WeakSchedule,
}

impl WeakSupFn {
    pub fn dense(kind: WeakKind) -> Self {
        Self {
            kind,
            schedule: WeakSchedule::Every(1),
        }
    }

    pub fn every(kind: WeakKind, delay: usize) -> Result<Self> {
        if delay == 0 {
            return Err(Error::InvalidArgument("weak delay must be >= 1".into()));
        }
        Ok(Self {
            kind,
            schedule: WeakSchedule::Every(delay),
        })
    }

    /// Kind of supervision available at step `t`, if any.
    pub fn kind_at(&self, t: usize) -> Option<WeakKind> {
        match &self.schedule {
            WeakSchedule::Every(k) => (t % k == 0).then_some(self.kind),
            WeakSchedule::Explicit(steps) => steps.iter().find(|(s, _)| *s == t).map(|(_, k)| *k),
        }
    }

    pub fn is_defined(&self, t: usize) -> bool {
        self.kind_at(t).is_some()
    }

    /// Score of `b` at step `t`, or `None` where the function is undefined.
    pub fn score(&self, t: usize, b: &BBox, reference: &BBox) -> Result<Option<WeakScore>> {
        self.kind_at(t).map(|k| k.score(b, reference)).transpose()
    }
}

/// A weak supervision value, guaranteed to lie in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct WeakScore(f64);

impl WeakScore {
    pub fn new(z: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&z) {
            Ok(Self(z))
        } else {
            Err(Error::InvalidArgument(format!(
                "weak score {z} outside [0, 1]"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Index of the 0.05-wide bin containing `z`, robust to representation error
/// at bin edges (0.7 must land in bin 14, not 13).
fn floor05_steps(z: f64) -> i64 {
    let micro = (z * 1e6).round() as i64;
    micro.div_euclid(50_000)
}

/// `z` floored to the 0.05 grid.
pub fn floor05(z: f64) -> f64 {
    floor05_steps(z) as f64 / 20.0
}

/// Reward shaping: floors `z` to the 0.05 grid and maps `[0, 1]` onto `[-1, 1]`.
pub fn nu(z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidArgument(format!("nu: {z} outside [0, 1]")));
    }
    Ok((2 * floor05_steps(z) - 20) as f64 / 20.0)
}

/// Reward for one step: 0 where supervision is undefined, -1 below 0.5,
/// otherwise the shaped score.
pub fn reward(score: Option<WeakScore>) -> f64 {
    match score {
        None => 0.0,
        Some(s) if s.get() >= 0.5 => nu(s.get()).expect("weak score lies in [0, 1]"),
        Some(_) => -1.0,
    }
}

/// Which cumulative return the critic regresses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnMode {
    /// `R_i = sum_{k>=i} gamma^(k-i) r_k`: reward still to come.
    #[default]
    Future,
    /// `R_i = sum_{k<=i} gamma^(k-1) r_k`: accumulated so far (ablation only).
    PastSum,
}

/// Discounted future returns via backward recursion.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Discounted returns accumulated from the start of the interaction.
pub fn past_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut discount = 1.0;
    rewards
        .iter()
        .map(|r| {
            acc += discount * r;
            discount *= gamma;
            acc
        })
        .collect()
}

pub fn returns_with(mode: ReturnMode, rewards: &[f64], gamma: f64) -> Vec<f64> {
    match mode {
        ReturnMode::Future => returns(rewards, gamma),
        ReturnMode::PastSum => past_returns(rewards, gamma),
    }
}

/// `1` iff the teacher's reward is at least the student's.
pub fn distill_mask(r_teacher: f64, r_student: f64) -> u8 {
    u8::from(r_teacher >= r_student)
}

/// Log-density of `a` under a diagonal Gaussian with mean `mu` and std `sigma`.
pub fn gaussian_log_density(a: &[f64; 4], mu: &[f64; 4], sigma: f64) -> f64 {
    let norm = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    a.iter()
        .zip(mu)
        .map(|(a, m)| -((a - m) * (a - m)) / (2.0 * sigma * sigma) - norm)
        .sum()
}

/// Whether the step was produced by an exploring (RL) or a distilling worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerMode {
    Rl,
    Kd,
}

/// Everything recorded about one interaction step.
#[derive(Clone, Debug)]
pub struct Step {
    pub state: State,
    /// Sampled action before clamping (equals `mu` in distillation mode).
    pub raw_action: [f64; 4],
    /// Action applied to the box.
    pub action: Action,
    pub mu: [f64; 4],
    pub value: f64,
    pub reward: f64,
    pub weak_score: Option<f64>,
    pub student_box: BBox,
    pub teacher_box: BBox,
    pub teacher_action: Action,
    pub teacher_reward: f64,
    pub mask: u8,
}

/// Trajectory of one student/video interaction.
#[derive(Clone, Debug)]
pub struct InteractionRecord {
    pub mode: WorkerMode,
    pub video_id: String,
    pub teacher: String,
    pub steps: Vec<Step>,
}

impl InteractionRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> Vec<&State> {
        self.steps.iter().map(|s| &s.state).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Head outputs as recorded during the interaction.
    pub fn recorded_heads(&self) -> Vec<HeadOutput> {
        self.steps
            .iter()
            .map(|s| HeadOutput {
                mu: s.mu,
                value: s.value,
            })
            .collect()
    }

    /// Mean L1 gap between teacher action and student mean on masked steps.
    pub fn masked_action_gap(&self) -> Option<f64> {
        let (sum, n) = self
            .steps
            .iter()
            .filter(|s| s.mask == 1)
            .fold((0.0, 0usize), |(acc, n), s| {
                (acc + l1(&s.teacher_action.to_array(), &s.mu), n + 1)
            });
        (n > 0).then(|| sum / n as f64)
    }
}

fn l1(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Policy-gradient loss with a detached one-step advantage.
///
/// Advantages are frozen from the values recorded during the interaction;
/// only the action mean carries gradient.
#[derive(Clone, Debug)]
pub struct PolicyLoss {
    actions: Vec<[f64; 4]>,
    advantages: Vec<f64>,
    sigma: f64,
}

impl PolicyLoss {
    pub fn new(rec: &InteractionRecord, sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        let values: Vec<f64> = rec.steps.iter().map(|s| s.value).collect();
        let advantages = rec
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let next = values.get(i + 1).copied().unwrap_or(0.0);
                s.reward + gamma * next - s.value
            })
            .collect();
        Ok(Self {
            actions: rec.steps.iter().map(|s| s.raw_action).collect(),
            advantages,
            sigma,
        })
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }
}

impl TrajectoryLoss for PolicyLoss {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        check_len(heads.len(), self.actions.len())?;
        let s2 = self.sigma * self.sigma;
        let mut eval = LossEval::zeros(heads.len());
        for (i, (h, (a, adv))) in heads
            .iter()
            .zip(self.actions.iter().zip(&self.advantages))
            .enumerate()
        {
            let logp = gaussian_log_density(a, &h.mu, self.sigma);
            if !logp.is_finite() {
                return Err(Error::NonFinite("policy log-density"));
            }
            eval.value -= logp * adv;
            for d in 0..4 {
                eval.d_mu[i][d] = -adv * (a[d] - h.mu[d]) / s2;
            }
        }
        Ok(eval)
    }
}

/// Squared-error critic loss against discounted returns.
#[derive(Clone, Debug)]
pub struct ValueLoss {
    targets: Vec<f64>,
}

impl ValueLoss {
    pub fn new(rec: &InteractionRecord, gamma: f64, mode: ReturnMode) -> Self {
        Self {
            targets: returns_with(mode, &rec.rewards(), gamma),
        }
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

impl TrajectoryLoss for ValueLoss {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        check_len(heads.len(), self.targets.len())?;
        let mut eval = LossEval::zeros(heads.len());
        for (i, (h, r)) in heads.iter().zip(&self.targets).enumerate() {
            let diff = r - h.value;
            eval.value += 0.5 * diff * diff;
            eval.d_value[i] = -diff;
        }
        Ok(eval)
    }
}

/// Masked L1 distance between teacher actions and the student's mean.
#[derive(Clone, Debug)]
pub struct DistillLoss {
    teacher_actions: Vec<[f64; 4]>,
    masks: Vec<u8>,
}

impl DistillLoss {
    pub fn new(rec: &InteractionRecord) -> Self {
        Self {
            teacher_actions: rec
                .steps
                .iter()
                .map(|s| s.teacher_action.to_array())
                .collect(),
            masks: rec.steps.iter().map(|s| s.mask).collect(),
        }
    }
}

impl TrajectoryLoss for DistillLoss {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        check_len(heads.len(), self.masks.len())?;
        let mut eval = LossEval::zeros(heads.len());
        for (i, (h, (t, &m))) in heads
            .iter()
            .zip(self.teacher_actions.iter().zip(&self.masks))
            .enumerate()
        {
            if m == 0 {
                continue;
            }
            eval.value += l1(t, &h.mu);
            for d in 0..4 {
                let diff = h.mu[d] - t[d];
                eval.d_mu[i][d] = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
        }
        Ok(eval)
    }
}

/// Actor-critic objective: policy loss plus value loss.
#[derive(Clone, Debug)]
pub struct RlLoss {
    pub policy: PolicyLoss,
    pub value: ValueLoss,
}

impl RlLoss {
    pub fn new(rec: &InteractionRecord, sigma: f64, gamma: f64, mode: ReturnMode) -> Result<Self> {
        Ok(Self {
            policy: PolicyLoss::new(rec, sigma, gamma)?,
            value: ValueLoss::new(rec, gamma, mode),
        })
    }
}

impl TrajectoryLoss for RlLoss {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        let mut total = self.policy.evaluate(heads)?;
        total.add(&self.value.evaluate(heads)?);
        Ok(total)
    }
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// `-sum log pi(a_i) * A_i` evaluated on the recorded action means.
pub fn policy_loss(rec: &InteractionRecord, sigma: f64, gamma: f64) -> Result<f64> {
    Ok(PolicyLoss::new(rec, sigma, gamma)?
        .evaluate(&rec.recorded_heads())?
        .value)
}

/// `sum 1/2 (R_i - v_i)^2` evaluated on the recorded values.
pub fn value_loss(rec: &InteractionRecord, gamma: f64) -> Result<f64> {
    Ok(ValueLoss::new(rec, gamma, ReturnMode::Future)
        .evaluate(&rec.recorded_heads())?
        .value)
}

/// `sum |a_T - mu|_1 * m` evaluated on the recorded action means.
pub fn distill_loss(rec: &InteractionRecord) -> Result<f64> {
    Ok(DistillLoss::new(rec).evaluate(&rec.recorded_heads())?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(mu: [f64; 4], raw: [f64; 4], value: f64, reward: f64) -> Step {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        Step {
            state: State::new(1, vec![0.0], vec![0.0]).unwrap(),
            raw_action: raw,
            action: Action::from_array(raw),
            mu,
            value,
            reward,
            weak_score: None,
            student_box: b,
            teacher_box: b,
            teacher_action: Action::ZERO,
            teacher_reward: 0.0,
            mask: 1,
        }
    }

    fn record(steps: Vec<Step>) -> InteractionRecord {
        InteractionRecord {
            mode: WorkerMode::Rl,
            video_id: "fixture".into(),
            teacher: "t".into(),
            steps,
        }
    }

    #[test]
    fn nu_examples() {
        assert_eq!(nu(1.0).unwrap(), 1.0);
        assert_eq!(nu(0.5).unwrap(), 0.0);
        assert_eq!(nu(0.73).unwrap(), 0.40);
        assert_eq!(nu(0.7).unwrap(), 0.40);
        assert_eq!(nu(0.0).unwrap(), -1.0);
        assert!(nu(1.01).is_err());
        assert!(nu(-0.01).is_err());
    }

    #[test]
    fn reward_cases() {
        let s = |z| Some(WeakScore::new(z).unwrap());
        assert_eq!(reward(None), 0.0);
        assert_eq!(reward(s(0.49)), -1.0);
        assert_eq!(reward(s(0.87)), 0.70);
        assert_eq!(reward(s(0.5)), 0.0);
        assert_eq!(reward(s(1.0)), 1.0);
        assert!(WeakScore::new(1.5).is_err());
    }

    #[test]
    fn returns_examples() {
        assert_eq!(returns(&[1.0], 0.3), vec![1.0]);
        let r = returns(&[1.0, -1.0, 1.0], 0.9);
        for (a, b) in r.iter().zip([0.91, -0.1, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(returns(&[0.5, -1.0, 0.2], 0.0), vec![0.5, -1.0, 0.2]);
        assert!(returns(&[], 0.9).is_empty());
        assert_eq!(past_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.0, 1.5, 1.75]);
    }

    #[test]
    fn mask_truth_table() {
        assert_eq!(distill_mask(0.7, -1.0), 1);
        assert_eq!(distill_mask(-1.0, 0.7), 0);
        assert_eq!(distill_mask(0.0, 0.0), 1);
    }

    #[test]
    fn policy_loss_at_mode() {
        // a = mu, A = 1 (r = 1, v = 0, terminal): loss = -log N(mu | mu, 0.05).
        let rec = record(vec![step([0.1; 4], [0.1; 4], 0.0, 1.0)]);
        let loss = policy_loss(&rec, 0.05, 0.99).unwrap();
        let expected = 4.0 * (0.05 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - (-8.307)).abs() < 1e-3);
    }

    #[test]
    fn policy_loss_zero_advantage() {
        // r_i + gamma v_{i+1} - v_i = 0 on every step
        let rec = record(vec![
            step([0.0; 4], [0.3; 4], 1.5, 0.5),
            step([0.0; 4], [-0.2; 4], 1.0, 1.0),
        ]);
        assert_eq!(policy_loss(&rec, 0.05, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn policy_loss_scales_with_advantage() {
        let a = record(vec![step([0.0; 4], [0.05; 4], 0.0, 0.4)]);
        let b = record(vec![step([0.0; 4], [0.05; 4], 0.0, 1.2)]);
        let la = policy_loss(&a, 0.05, 0.9).unwrap();
        let lb = policy_loss(&b, 0.05, 0.9).unwrap();
        assert!((lb - 3.0 * la).abs() < 1e-12);
    }

    #[test]
    fn value_loss_examples() {
        let rec = record(vec![step([0.0; 4], [0.0; 4], 0.0, 1.0)]);
        assert_eq!(value_loss(&rec, 0.9).unwrap(), 0.5);
        let rec = record(vec![
            step([0.0; 4], [0.0; 4], 1.9, 1.0),
            step([0.0; 4], [0.0; 4], 1.0, 1.0),
        ]);
        assert!(value_loss(&rec, 0.9).unwrap() < 1e-24);
    }

    #[test]
    fn distill_loss_examples() {
        let mut s = step([0.0; 4], [0.0; 4], 0.0, 0.0);
        s.teacher_action = Action::clamped(0.5, -0.5, 0.0, 0.0);
        let mut rec = record(vec![s]);
        assert_eq!(distill_loss(&rec).unwrap(), 1.0);
        rec.steps[0].mask = 0;
        assert_eq!(distill_loss(&rec).unwrap(), 0.0);
        rec.steps[0].mask = 1;
        rec.steps[0].mu = [0.5, -0.5, 0.0, 0.0];
        assert_eq!(distill_loss(&rec).unwrap(), 0.0);
    }

    #[test]
    fn weak_schedules() {
        let w = WeakSupFn {
            kind: WeakKind::Iou,
            schedule: WeakSchedule::Explicit(vec![(0, WeakKind::Iou), (5, WeakKind::NormDist)]),
        };
        assert_eq!(w.kind_at(5), Some(WeakKind::NormDist));
        assert_eq!(w.kind_at(4), None);
        let every = WeakSupFn::every(WeakKind::Iou, 8).unwrap();
        assert!(every.is_defined(0) && every.is_defined(16) && !every.is_defined(3));
        assert!(WeakSupFn::every(WeakKind::Iou, 0).is_err());
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(every.score(3, &b, &b).unwrap(), None);
        assert_eq!(
            every.score(8, &b, &b).unwrap().map(WeakScore::get),
            Some(1.0)
        );
    }

    proptest! {
        #[test]
        fn nu_monotone_and_idempotent(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(nu(lo).unwrap() <= nu(hi).unwrap());
            prop_assert_eq!(nu(floor05(a)).unwrap(), nu(a).unwrap());
        }

        #[test]
        fn reward_lands_on_grid(z in 0.0..=1.0f64) {
            let r = reward(Some(WeakScore::new(z).unwrap()));
            prop_assert!((-1.0..=1.0).contains(&r));
            if z >= 0.5 {
                let g = 20.0 * (r + 1.0) / 2.0;
                prop_assert!((g - g.round()).abs() < 1e-9);
            } else {
                prop_assert_eq!(r, -1.0);
            }
        }

        #[test]
        fn value_loss_non_negative(
            vals in prop::collection::vec(-5.0..5.0f64, 1..10),
            gamma in 0.0..=1.0f64,
        ) {
            let rec = record(vals.iter().map(|&v| step([0.0; 4], [0.0; 4], v, v.tanh())).collect());
            prop_assert!(value_loss(&rec, gamma).unwrap() >= 0.0);
        }
    }
}
