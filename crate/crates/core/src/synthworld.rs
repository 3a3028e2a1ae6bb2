//! Synthetic single-target videos for a source domain and shifted target
//! domains, plus the chunking and temporal-reversal augmentation used during
//! training.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::BBox;
use crate::rlcore::WeakKind;
use crate::seeds::{self, SeedStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    LinearBounce,
    Sinusoidal,
    RandomWalk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Appearance {
    SolidBlob,
    TexturedBlob,
    InvertedModality,
}

impl Appearance {
    /// `(background, foreground, clutter)` intensities.
    fn palette(self) -> (f32, f32, f32) {
        match self {
            Appearance::SolidBlob | Appearance::TexturedBlob => (0.0, 0.9, 0.55),
            Appearance::InvertedModality => (0.85, 0.1, 0.45),
        }
    }
}

/// Parameters of one synthetic domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Side of the square frame, in pixels.
    pub frame_size: usize,
    /// Target side range `[min, max]`, sampled independently for w and h.
    pub target_size: (f64, f64),
    pub motion: MotionModel,
    /// Target speed range in pixels per frame.
    pub speed: (f64, f64),
    pub appearance: Appearance,
    /// Static distractor blobs per frame.
    pub clutter_density: f64,
    pub noise_std: f64,
    /// Relative amplitude of a slow periodic size change.
    pub scale_amplitude: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::InvalidArgument(format!(
                "domain '{}': {m}",
                self.name
            )))
        };
        let (smin, smax) = self.target_size;
        let (vmin, vmax) = self.speed;
        if self.frame_size < 16 {
            return bad(format!("frame size {} too small", self.frame_size));
        }
        if !(smin > 0.0 && smin <= smax && smax < self.frame_size as f64 / 2.0) {
            return bad(format!("target size range {smin}..{smax} invalid"));
        }
        if !(vmin >= 0.0 && vmin <= vmax && vmax < self.frame_size as f64 / 4.0) {
            return bad(format!("speed range {vmin}..{vmax} invalid"));
        }
        if !(self.clutter_density >= 0.0 && self.noise_std >= 0.0) {
            return bad("clutter density and noise must be non-negative".into());
        }
        if !(0.0..0.5).contains(&self.scale_amplitude) {
            return bad(format!(
                "scale amplitude {} outside [0, 0.5)",
                self.scale_amplitude
            ));
        }
        Ok(())
    }

    /// Shipped presets. `source` is the pretraining domain; the others shift
    /// one or more of target size, motion, appearance, clutter and noise.
    pub fn preset(name: &str) -> Result<Self> {
        let base = DomainSpec {
            name: name.to_string(),
            frame_size: 128,
            target_size: (16.0, 28.0),
            motion: MotionModel::LinearBounce,
            speed: (1.0, 4.0),
            appearance: Appearance::SolidBlob,
            clutter_density: 0.0,
            noise_std: 0.02,
            scale_amplitude: 0.0,
        };
        let spec = match name {
            "source" => base,
            // tiny targets, cluttered ground
            "drone-like" => DomainSpec {
                target_size: (6.0, 10.0),
                motion: MotionModel::RandomWalk,
                speed: (1.0, 3.0),
                clutter_density: 3.0,
                noise_std: 0.03,
                ..base
            },
            // inverted sensor modality
            "thermal-like" => DomainSpec {
                target_size: (14.0, 26.0),
                appearance: Appearance::InvertedModality,
                clutter_density: 1.0,
                noise_std: 0.04,
                ..base
            },
            // oscillating motion, murky water
            "underwater-like" => DomainSpec {
                motion: MotionModel::Sinusoidal,
                speed: (1.5, 4.5),
                appearance: Appearance::TexturedBlob,
                noise_std: 0.08,
                ..base
            },
            // faster targets that change size
            "vehicle-like" => DomainSpec {
                target_size: (12.0, 30.0),
                speed: (2.0, 6.0),
                appearance: Appearance::TexturedBlob,
                clutter_density: 2.0,
                scale_amplitude: 0.2,
                ..base
            },
            // slow, jittery manipulation targets among look-alike parts
            "manipulation-like" => DomainSpec {
                target_size: (18.0, 30.0),
                motion: MotionModel::RandomWalk,
                speed: (0.5, 2.5),
                appearance: Appearance::TexturedBlob,
                clutter_density: 4.0,
                ..base
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown domain preset '{other}' (known: {})",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 6] = [
        "source",
        "drone-like",
        "thermal-like",
        "underwater-like",
        "vehicle-like",
        "manipulation-like",
    ];
}

/// A video with one ground-truth box per frame. Frames are shared so that
/// chunks and reversed copies cost no pixel copies.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: Vec<Arc<Frame>>,
    pub gt: Vec<BBox>,
    /// Steps where weak supervision is released, if the video carries its own
    /// schedule (`weaklabels.txt`).
    pub weak_labels: Option<Vec<(usize, WeakKind)>>,
}

impl Video {
    pub fn new(id: impl Into<String>, frames: Vec<Arc<Frame>>, gt: Vec<BBox>) -> Result<Self> {
        if frames.len() != gt.len() {
            return Err(Error::DimensionMismatch {
                expected: frames.len(),
                got: gt.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            frames,
            gt,
            weak_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Consecutive sub-video `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize, id: impl Into<String>) -> Result<Video> {
        if start + len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}+{len} exceeds video of {} frames",
                self.len()
            )));
        }
        Ok(Video {
            id: id.into(),
            frames: self.frames[start..start + len].to_vec(),
            gt: self.gt[start..start + len].to_vec(),
            weak_labels: self.weak_labels.as_ref().map(|labels| {
                labels
                    .iter()
                    .filter(|(t, _)| *t >= start && *t < start + len)
                    .map(|&(t, k)| (t - start, k))
                    .collect()
            }),
        })
    }

    /// The same video played backwards.
    pub fn reversed(&self) -> Video {
        let n = self.len();
        let mut frames = self.frames.clone();
        frames.reverse();
        let mut gt = self.gt.clone();
        gt.reverse();
        let weak_labels = self.weak_labels.as_ref().map(|labels| {
            let mut l: Vec<_> = labels.iter().map(|&(t, k)| (n - 1 - t, k)).collect();
            l.sort();
            l
        });
        Video {
            id: format!("{}~rev", self.id),
            frames,
            gt,
            weak_labels,
        }
    }
}

/// Initial conditions of the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionInit {
    pub start: BBox,
    /// Initial velocity in pixels per frame.
    pub velocity: (f64, f64),
}

/// Target trajectory under the domain's motion model.
pub fn simulate_motion(
    spec: &DomainSpec,
    init: MotionInit,
    length: usize,
    rng: &mut SeedStream,
) -> Vec<BBox> {
    let fs = spec.frame_size as f64;
    let (w0, h0) = (init.start.w, init.start.h);
    let (mut cx, mut cy) = init.start.center();
    let (mut vx, mut vy) = init.velocity;
    let vmax = spec.speed.1.max(1e-9);
    // sinusoidal motion: per-axis oscillation through the start position
    let period = rng.range(40.0, 100.0);
    let omega = 2.0 * PI / period;
    let phase = (rng.range(0.0, 2.0 * PI), rng.range(0.0, 2.0 * PI));
    let peak_speed = vx.hypot(vy).max(spec.speed.0);
    let room = |c: f64, half: f64| ((c - half).min(fs - c - half) / 2.0).max(0.0);
    let ax = (peak_speed / omega).min(room(cx, 0.75 * w0));
    let ay = (peak_speed / omega).min(room(cy, 0.75 * h0));
    let (ox, oy) = (cx - ax * phase.0.sin(), cy - ay * phase.1.sin());
    let scale_period = rng.range(60.0, 120.0);
    let scale_phase = rng.range(0.0, 2.0 * PI);

    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        let s = 1.0
            + spec.scale_amplitude * (2.0 * PI * t as f64 / scale_period + scale_phase).sin()
            - spec.scale_amplitude * scale_phase.sin();
        let (w, h) = (w0 * s, h0 * s);
        if t > 0 {
            match spec.motion {
                MotionModel::LinearBounce => {
                    cx += vx;
                    cy += vy;
                }
                MotionModel::RandomWalk => {
                    vx += rng.normal(0.0, 0.3 * vmax);
                    vy += rng.normal(0.0, 0.3 * vmax);
                    let speed = vx.hypot(vy);
                    if speed > vmax {
                        vx *= vmax / speed;
                        vy *= vmax / speed;
                    }
                    cx += vx;
                    cy += vy;
                }
                MotionModel::Sinusoidal => {
                    let tt = omega * t as f64;
                    cx = ox + ax * (tt + phase.0).sin();
                    cy = oy + ay * (tt + phase.1).sin();
                }
            }
            // reflect off the frame borders
            if cx - w / 2.0 < 0.0 {
                cx = w - cx;
                vx = vx.abs();
            } else if cx + w / 2.0 > fs {
                cx = 2.0 * fs - w - cx;
                vx = -vx.abs();
            }
            if cy - h / 2.0 < 0.0 {
                cy = h - cy;
                vy = vy.abs();
            } else if cy + h / 2.0 > fs {
                cy = 2.0 * fs - h - cy;
                vy = -vy.abs();
            }
        }
        out.push(BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        });
    }
    out
}

/// Area of the pixel `[px, px+1) × [py, py+1)` covered by `b`.
fn coverage(b: &BBox, px: usize, py: usize) -> f64 {
    let ox = (b.right().min(px as f64 + 1.0) - b.x.max(px as f64)).max(0.0);
    let oy = (b.bottom().min(py as f64 + 1.0) - b.y.max(py as f64)).max(0.0);
    ox * oy
}

/// Paints a box with anti-aliased edges. `texture` maps the pixel position
/// relative to the box to an intensity.
fn paint(frame: &mut Frame, b: &BBox, texture: impl Fn(f64, f64) -> f32) {
    let size = frame.width();
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = (b.right().ceil().max(0.0) as usize).min(size);
    let y1 = (b.bottom().ceil().max(0.0) as usize).min(frame.height());
    for py in y0..y1 {
        for px in x0..x1 {
            let c = coverage(b, px, py) as f32;
            if c <= 0.0 {
                continue;
            }
            let fg = texture(px as f64 + 0.5 - b.x, py as f64 + 0.5 - b.y);
            let v = &mut frame.data_mut()[py * size + px];
            *v = (1.0 - c) * *v + c * fg;
        }
    }
}

/// Renders the scene for one frame.
fn render(spec: &DomainSpec, target: &BBox, clutter: &[BBox], noise: &mut SeedStream) -> Frame {
    let n = spec.frame_size;
    let (bg, fg, clutter_fg) = spec.appearance.palette();
    let mut f = Frame::filled(n, n, bg).expect("non-empty frame");
    for c in clutter {
        paint(&mut f, c, |_, _| clutter_fg);
    }
    match spec.appearance {
        Appearance::TexturedBlob => {
            let cell = (target.w.min(target.h) / 3.0).max(2.0);
            paint(&mut f, target, move |u, v| {
                if ((u / cell).floor() as i64 + (v / cell).floor() as i64) % 2 == 0 {
                    fg
                } else {
                    fg * 0.55
                }
            })
        }
        _ => paint(&mut f, target, |_, _| fg),
    }
    if spec.noise_std > 0.0 {
        for v in f.data_mut() {
            *v = (*v as f64 + noise.normal(0.0, spec.noise_std)).clamp(0.0, 1.0) as f32;
        }
    }
    f
}

/// Renders a video from an explicit target trajectory.
pub fn render_video(
    spec: &DomainSpec,
    id: impl Into<String>,
    gt: Vec<BBox>,
    seed: u64,
) -> Result<Video> {
    spec.validate()?;
    let mut rng = SeedStream::derived(seed, &[seeds::label("clutter")]);
    let n_clutter = {
        let whole = spec.clutter_density.floor() as usize;
        whole + usize::from(rng.bernoulli(spec.clutter_density.fract()))
    };
    let fs = spec.frame_size as f64;
    let clutter: Vec<BBox> = (0..n_clutter)
        .map(|_| {
            let w = rng.range(spec.target_size.0, spec.target_size.1) * rng.range(0.5, 1.0);
            let h = rng.range(spec.target_size.0, spec.target_size.1) * rng.range(0.5, 1.0);
            BBox {
                x: rng.range(0.0, fs - w),
                y: rng.range(0.0, fs - h),
                w,
                h,
            }
        })
        .collect();
    let mut noise = SeedStream::derived(seed, &[seeds::label("noise")]);
    let frames = gt
        .iter()
        .map(|b| Arc::new(render(spec, b, &clutter, &mut noise)))
        .collect();
    Video::new(id, frames, gt)
}

/// Deterministic synthetic video for `(spec, seed)`.
pub fn generate_video(spec: &DomainSpec, seed: u64, length: usize) -> Result<Video> {
    generate_video_with_id(spec, seed, length, format!("{}-{seed:016x}", spec.name))
}

pub fn generate_video_with_id(
    spec: &DomainSpec,
    seed: u64,
    length: usize,
    id: String,
) -> Result<Video> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!(
            "video length must be >= 2, got {length}"
        )));
    }
    spec.validate()?;
    let mut rng = SeedStream::derived(seed, &[seeds::label("motion")]);
    let fs = spec.frame_size as f64;
    let w = rng.range(spec.target_size.0, spec.target_size.1);
    let h = rng.range(spec.target_size.0, spec.target_size.1);
    let margin = 0.75 * w.max(h);
    let cx = rng.range(margin, fs - margin);
    let cy = rng.range(margin, fs - margin);
    let speed = rng.range(spec.speed.0, spec.speed.1);
    let angle = rng.range(0.0, 2.0 * PI);
    let init = MotionInit {
        start: BBox::from_center(cx, cy, w, h)?,
        velocity: (speed * angle.cos(), speed * angle.sin()),
    };
    let gt = simulate_motion(spec, init, length, &mut rng);
    render_video(spec, id, gt, seed)
}

/// `n_chunks` random windows of `chunk_len` consecutive frames (starts drawn
/// uniformly, with replacement).
pub fn chunk_sequences(
    v: &Video,
    chunk_len: usize,
    n_chunks: usize,
    seed: u64,
) -> Result<Vec<Video>> {
    if chunk_len == 0 || v.len() < chunk_len {
        return Err(Error::InvalidArgument(format!(
            "video {} has {} frames, chunk length is {chunk_len}",
            v.id,
            v.len()
        )));
    }
    let mut rng = SeedStream::derived(seed, &[seeds::label(&v.id), seeds::label("chunks")]);
    let starts = v.len() - chunk_len + 1;
    (0..n_chunks)
        .map(|k| {
            let start = rng.index(starts);
            v.slice(start, chunk_len, format!("{}#{k}@{start}", v.id))
        })
        .collect()
}

/// Returns the reversed video with probability `p`, else a copy of `v`.
pub fn maybe_reverse(v: &Video, p: f64, seed: u64) -> Video {
    let mut rng = SeedStream::derived(seed, &[seeds::label("reverse")]);
    if rng.bernoulli(p) {
        v.reversed()
    } else {
        v.clone()
    }
}
