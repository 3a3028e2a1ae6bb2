//! Bounding-box arithmetic, action/box transforms and state-patch extraction.

use std::fmt;

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Minimum side length, in pixels, of a box produced by [`apply_action`].
pub const MIN_BOX_SIDE: f64 = 2.0;

/// Center-distance truncation used by [`norm_dist_score`], in pixels.
pub const NORM_DIST_TRUNCATION: f64 = 20.0;

/// Axis-aligned box: top-left corner plus width and height, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        let reason = if ![self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
        {
            "coordinates must be finite"
        } else if self.w <= 0.0 || self.h <= 0.0 {
            "width and height must be positive"
        } else {
            return Ok(());
        };
        Err(Error::InvalidBox {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
            reason,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Box scaled by `factor` about its own center.
    pub fn scaled_about_center(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        Self {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw > 0.0 && ih > 0.0 {
            iw * ih
        } else {
            0.0
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Relative box motion: translations in units of the previous box extent and
/// multiplicative scale changes. Every component lies in `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    /// Builds an action, clamping each component into `[-1, 1]`.
    pub fn clamped(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self::from_array([dx, dy, dw, dh])
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        let c = |v: f64| v.clamp(-1.0, 1.0);
        Self {
            dx: c(a[0]),
            dy: c(a[1]),
            dw: c(a[2]),
            dh: c(a[3]),
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

/// Intersection over union of two boxes.
pub fn iou(b: &BBox, g: &BBox) -> Result<f64> {
    b.validate()?;
    g.validate()?;
    let inter = b.intersection_area(g);
    let union = b.area() + g.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Euclidean distance between box centers.
pub fn center_distance(b: &BBox, g: &BBox) -> f64 {
    let (bx, by) = b.center();
    let (gx, gy) = g.center();
    (bx - gx).hypot(by - gy)
}

/// `1 - min(d, 20) / 20` where `d` is the center distance in pixels.
pub fn norm_dist_score(b: &BBox, g: &BBox) -> Result<f64> {
    b.validate()?;
    g.validate()?;
    let d = center_distance(b, g).min(NORM_DIST_TRUNCATION);
    Ok(1.0 - d / NORM_DIST_TRUNCATION)
}

/// Moves `prev` by `a`. Translations are relative to the previous extent,
/// scale changes are multiplicative; sides never shrink below [`MIN_BOX_SIDE`].
pub fn apply_action(prev: &BBox, a: &Action) -> BBox {
    BBox {
        x: prev.x + a.dx * prev.w,
        y: prev.y + a.dy * prev.h,
        w: (prev.w * (1.0 + a.dw)).max(MIN_BOX_SIDE),
        h: (prev.h * (1.0 + a.dh)).max(MIN_BOX_SIDE),
    }
}

/// Action that moves `prev` onto `target`, clamped componentwise to `[-1, 1]`.
pub fn invert_action(prev: &BBox, target: &BBox) -> Result<Action> {
    prev.validate()?;
    target.validate()?;
    Ok(Action::clamped(
        (target.x - prev.x) / prev.w,
        (target.y - prev.y) / prev.h,
        target.w / prev.w - 1.0,
        target.h / prev.h - 1.0,
    ))
}

/// MDP state: two square patches cropped around the previous box from the
/// previous and the current frame.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    size: usize,
    patch_prev: Vec<f64>,
    patch_cur: Vec<f64>,
}

impl State {
    pub fn new(size: usize, patch_prev: Vec<f64>, patch_cur: Vec<f64>) -> Result<Self> {
        for p in [&patch_prev, &patch_cur] {
            if p.len() != size * size {
                return Err(Error::DimensionMismatch {
                    expected: size * size,
                    got: p.len(),
                });
            }
        }
        Ok(Self {
            size,
            patch_prev,
            patch_cur,
        })
    }

    /// Patch side length in pixels.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn patch_prev(&self) -> &[f64] {
        &self.patch_prev
    }

    pub fn patch_cur(&self) -> &[f64] {
        &self.patch_cur
    }
}

/// Crop window used by [`crop_state`]: `prev` scaled by `chi` about its center.
pub fn crop_window(prev: &BBox, chi: f64) -> BBox {
    prev.scaled_about_center(chi)
}

/// Builds the state from two consecutive frames around `prev`.
///
/// The crop window is resampled to `size × size` with bilinear interpolation
/// at half-pixel centers; regions outside the frame read as zero.
pub fn crop_state(
    frame_prev: &Frame,
    frame_cur: &Frame,
    prev: &BBox,
    chi: f64,
    size: usize,
) -> Result<State> {
    if !(chi >= 1.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "context factor must be >= 1, got {chi}"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    prev.validate()?;
    let window = crop_window(prev, chi);
    Ok(State {
        size,
        patch_prev: resample(frame_prev, &window, size),
        patch_cur: resample(frame_cur, &window, size),
    })
}

fn resample(frame: &Frame, window: &BBox, size: usize) -> Vec<f64> {
    let sx = window.w / size as f64;
    let sy = window.h / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let v = window.y + (i as f64 + 0.5) * sy;
        for j in 0..size {
            let u = window.x + (j as f64 + 0.5) * sx;
            out.push(frame.sample_bilinear(u, v));
        }
    }
    out
}
