//! Scripted teacher trackers: noisy, occasionally drifting copies of the
//! ground truth whose quality depends on the domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, MIN_BOX_SIDE};
use crate::rlcore::WeakSupFn;
use crate::seeds::{self, SeedStream};
use crate::synthworld::Video;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherProfile {
    pub name: String,
    /// Per-axis standard deviation of the center error, in pixels.
    #[serde(default)]
    pub center_noise_std: f64,
    /// Standard deviation of the relative width/height error.
    #[serde(default)]
    pub scale_noise_std: f64,
    #[serde(default)]
    pub drift_prob: f64,
    /// Longest drift episode in frames; 0 means episodes end only on recapture.
    #[serde(default)]
    pub drift_len: usize,
    #[serde(default)]
    pub recapture_prob: f64,
    /// Multiplier on both noise terms per domain preset; absent domains use 1.
    #[serde(default)]
    pub skill_map: BTreeMap<String, f64>,
}

impl TeacherProfile {
    /// A noiseless, never-drifting teacher.
    pub fn oracle(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            center_noise_std: 0.0,
            scale_noise_std: 0.0,
            drift_prob: 0.0,
            drift_len: 0,
            recapture_prob: 0.0,
            skill_map: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("teacher '{}': {what}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Config("teacher with empty name".into()));
        }
        for (p, n) in [
            (self.drift_prob, "drift_prob"),
            (self.recapture_prob, "recapture_prob"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{n} = {p} outside [0, 1]"));
            }
        }
        if !(self.center_noise_std >= 0.0 && self.scale_noise_std >= 0.0) {
            return bad("noise must be >= 0");
        }
        if let Some((d, m)) = self
            .skill_map
            .iter()
            .find(|(_, m)| !(**m >= 0.0 && m.is_finite()))
        {
            return bad(&format!("skill multiplier {m} for '{d}' must be >= 0"));
        }
        Ok(())
    }

    pub fn skill(&self, domain: &str) -> f64 {
        self.skill_map.get(domain).copied().unwrap_or(1.0)
    }
}

/// Per-video mutable state of a running teacher.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeacherState {
    frame: usize,
    last: Option<BBox>,
    drifting: bool,
    drift_age: usize,
}

impl TeacherState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_drifting(&self) -> bool {
        self.drifting
    }
}

/// Next teacher box for a frame whose true box is `gt`. The first call of a
/// fresh state returns `gt` unchanged: every tracker is handed the initial box.
pub fn teacher_predict(
    profile: &TeacherProfile,
    gt: &BBox,
    domain: &str,
    state: &mut TeacherState,
    rng: &mut SeedStream,
) -> BBox {
    let t = state.frame;
    state.frame += 1;
    let out = match state.last {
        None => *gt,
        Some(last) => {
            if state.drifting {
                state.drift_age += 1;
                let expired = profile.drift_len > 0 && state.drift_age > profile.drift_len;
                if expired || rng.bernoulli(profile.recapture_prob) {
                    state.drifting = false;
                }
            } else if rng.bernoulli(profile.drift_prob) {
                state.drifting = true;
                state.drift_age = 1;
            }
            if state.drifting {
                last
            } else {
                noisy(profile, gt, domain, rng)
            }
        }
    };
    debug_assert!(t > 0 || out == *gt);
    state.last = Some(out);
    out
}

fn noisy(profile: &TeacherProfile, gt: &BBox, domain: &str, rng: &mut SeedStream) -> BBox {
    let k = profile.skill(domain);
    let (cs, ss) = (profile.center_noise_std * k, profile.scale_noise_std * k);
    if cs == 0.0 && ss == 0.0 {
        return *gt;
    }
    let (cx, cy) = gt.center();
    let cx = cx + rng.normal(0.0, cs);
    let cy = cy + rng.normal(0.0, cs);
    let w = (gt.w * (1.0 + rng.normal(0.0, ss))).max(MIN_BOX_SIDE);
    let h = (gt.h * (1.0 + rng.normal(0.0, ss))).max(MIN_BOX_SIDE);
    BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    }
}

/// Seed of the noise stream a teacher uses on one video.
pub fn teacher_seed(profile: &TeacherProfile, video_id: &str, seed: u64) -> u64 {
    seeds::derive(
        seed,
        &[
            seeds::label("teacher"),
            seeds::label(&profile.name),
            seeds::label(video_id),
        ],
    )
}

/// The teacher's full trajectory on `v`, deterministic in `(profile, v.id, seed)`.
pub fn teacher_track(profile: &TeacherProfile, v: &Video, domain: &str, seed: u64) -> Vec<BBox> {
    let mut rng = SeedStream::new(teacher_seed(profile, &v.id, seed));
    let mut st = TeacherState::new();
    v.gt.iter()
        .map(|g| teacher_predict(profile, g, domain, &mut st, &mut rng))
        .collect()
}

/// Mean weak score of a predicted track over the frames where `w` is defined.
pub fn track_quality(track: &[BBox], v: &Video, w: &WeakSupFn) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, (b, g)) in track.iter().zip(&v.gt).enumerate() {
        if let Some(z) = w.score(t, b, g)? {
            sum += z.get();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoWeakLabels(v.id.clone()));
    }
    Ok(sum / n as f64)
}

pub fn teacher_quality(
    profile: &TeacherProfile,
    v: &Video,
    w: &WeakSupFn,
    domain: &str,
    seed: u64,
) -> Result<f64> {
    track_quality(&teacher_track(profile, v, domain, seed), v, w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    Random,
    #[default]
    QualityArgmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherPool {
    pub teachers: Vec<TeacherProfile>,
    #[serde(default)]
    pub selection_mode: SelectionMode,
}

impl Default for TeacherPool {
    /// Three teachers with complementary strengths across the presets.
    fn default() -> Self {
        let skills =
            |pairs: &[(&str, f64)]| pairs.iter().map(|(d, m)| (d.to_string(), *m)).collect();
        Self {
            teachers: vec![
                TeacherProfile {
                    name: "mdnet-like".into(),
                    center_noise_std: 1.5,
                    scale_noise_std: 0.06,
                    drift_prob: 0.01,
                    drift_len: 8,
                    recapture_prob: 0.2,
                    skill_map: skills(&[
                        ("drone-like", 2.5),
                        ("thermal-like", 0.7),
                        ("underwater-like", 1.5),
                    ]),
                },
                TeacherProfile {
                    name: "siamrpn-like".into(),
                    center_noise_std: 1.2,
                    scale_noise_std: 0.05,
                    drift_prob: 0.02,
                    drift_len: 6,
                    recapture_prob: 0.3,
                    skill_map: skills(&[
                        ("drone-like", 0.8),
                        ("thermal-like", 2.0),
                        ("vehicle-like", 0.7),
                    ]),
                },
                TeacherProfile {
                    name: "atom-like".into(),
                    center_noise_std: 1.8,
                    scale_noise_std: 0.04,
                    drift_prob: 0.01,
                    drift_len: 10,
                    recapture_prob: 0.25,
                    skill_map: skills(&[
                        ("underwater-like", 0.6),
                        ("manipulation-like", 0.7),
                        ("drone-like", 1.6),
                    ]),
                },
            ],
            selection_mode: SelectionMode::QualityArgmax,
        }
    }
}

impl TeacherPool {
    pub fn validate(&self) -> Result<()> {
        if self.teachers.is_empty() {
            return Err(Error::Config("teacher pool is empty".into()));
        }
        for (i, t) in self.teachers.iter().enumerate() {
            t.validate()?;
            if self.teachers[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!(
                    "duplicate teacher name '{}'",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TeacherProfile> {
        self.teachers.iter().find(|t| t.name == name)
    }
}

/// Outcome of choosing a teacher for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Quality of every pool member, in pool order. Empty in random mode.
    pub qualities: Vec<f64>,
}

/// Picks the teacher for `v`. Quality-argmax keeps the first of equally good
/// teachers; random mode draws uniformly from `seed`.
pub fn select_teacher(
    pool: &TeacherPool,
    v: &Video,
    w: &WeakSupFn,
    domain: &str,
    seed: u64,
) -> Result<Selection> {
    if pool.teachers.is_empty() {
        return Err(Error::Config("teacher pool is empty".into()));
    }
    match pool.selection_mode {
        SelectionMode::Random => {
            let mut rng = SeedStream::derived(seed, &[seeds::label("select"), seeds::label(&v.id)]);
            Ok(Selection {
                index: rng.index(pool.teachers.len()),
                qualities: Vec::new(),
            })
        }
        SelectionMode::QualityArgmax => {
            let qualities = pool
                .teachers
                .iter()
                .map(|t| teacher_quality(t, v, w, domain, seed))
                .collect::<Result<Vec<_>>>()?;
            Ok(Selection {
                index: argmax_first(&qualities),
                qualities,
            })
        }
    }
}

/// Index of the largest value; the earliest one on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
