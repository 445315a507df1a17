//! Geometric and state vocabulary shared by every stage of the tracker.
//!
//! Coordinates are continuous pixels: pixel `(col, row)` covers the square
//! `[col, col + 1) x [row, row + 1)` and its center sits at
//! `(col + 0.5, row + 0.5)`. Angles are degrees; ellipse orientations are
//! unsigned axes in `[0, 180)` while headings (travel directions) are signed
//! and live in `[0, 360)`.

use crate::error::{Error, Result};

/// Reduces any finite angle to the unsigned axis range `[0, 180)`.
pub fn normalize_angle(raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "angle must be finite, got {raw}"
        )));
    }
    Ok(axis(raw))
}

/// Infallible axis reduction for values already known to be finite.
pub(crate) fn axis(raw: f64) -> f64 {
    let r = raw.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if r >= 180.0 {
        0.0
    } else {
        r
    }
}

/// Reduces a direction to `[0, 360)`.
pub fn normalize_heading(raw: f64) -> f64 {
    let r = raw.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Wraps a signed angle to `(-180, 180]`.
pub fn wrap_signed(deg: f64) -> f64 {
    let r = normalize_heading(deg);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Circular distance between two unsigned axes, in `[0, 90]`.
///
/// Inputs are reduced to `[0, 180)` first, so a pair straddling the 0/180
/// seam (175 and 5) is 10 apart rather than 170.
pub fn angle_diff(d1: f64, d2: f64) -> f64 {
    debug_assert!(d1.is_finite() && d2.is_finite());
    let raw = (axis(d1) - axis(d2)).abs();
    raw.min(180.0 - raw)
}

/// Signed axis change from `from` to `to`, in `(-90, 90]`.
pub fn signed_axis_diff(to: f64, from: f64) -> f64 {
    let mut d = axis(to) - axis(from);
    if d > 90.0 {
        d -= 180.0;
    } else if d <= -90.0 {
        d += 180.0;
    }
    d
}

/// An oriented ellipse: `a` is the semi-length along the major axis, `b` the
/// semi-width, `delta` the major-axis angle to the image X axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

impl Ellipse {
    /// Builds a validated ellipse. Swapped axes are reordered (with the
    /// orientation turned by 90 degrees) so that `a >= b` always holds.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, delta: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidArgument(
                "ellipse center must be finite".into(),
            ));
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ellipse axes must be positive, got a={a} b={b}"
            )));
        }
        let delta = normalize_angle(delta)?;
        Ok(if a >= b {
            Ellipse {
                cx,
                cy,
                a,
                b,
                delta,
            }
        } else {
            Ellipse {
                cx,
                cy,
                a: b,
                b: a,
                delta: axis(delta + 90.0),
            }
        })
    }

    /// Same shape and orientation, centered elsewhere.
    pub fn moved_to(&self, cx: f64, cy: f64) -> Self {
        Ellipse { cx, cy, ..*self }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Ellipse {
            delta: axis(delta),
            ..*self
        }
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }

    /// Whether the point lies inside or on the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.interior().contains(x, y)
    }

    /// Whether the center of pixel `(col, row)` lies inside the ellipse.
    pub fn contains_pixel(&self, col: i64, row: i64) -> bool {
        self.contains(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.delta.to_radians().sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (hx, hy)
    }

    /// Precomputed interior test for hot loops.
    pub fn interior(&self) -> InteriorTest {
        let (sin, cos) = self.delta.to_radians().sin_cos();
        InteriorTest {
            cx: self.cx,
            cy: self.cy,
            cos,
            sin,
            inv_a2: 1.0 / (self.a * self.a),
            inv_b2: 1.0 / (self.b * self.b),
        }
    }
}

/// The rotated-ellipse quadratic form with trig evaluated once.
#[derive(Debug, Clone, Copy)]
pub struct InteriorTest {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_a2: f64,
    inv_b2: f64,
}

impl InteriorTest {
    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        u * u * self.inv_a2 + v * v * self.inv_b2
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.value(x, y) <= 1.0
    }
}

/// Per-frame movement distance and its first two finite differences.
///
/// Jerk is not stored; it only enters through the sampling spread of the
/// distance proposal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistanceState {
    /// Last movement distance, pixels per frame.
    pub distance: f64,
    /// Change of distance per frame.
    pub velocity: f64,
    /// Change of `velocity` per frame.
    pub acceleration: f64,
}

/// Per-target estimate carried from frame to frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub id: usize,
    pub lx: f64,
    pub ly: f64,
    /// Optimal appearance (highest-weight particle pose).
    pub ellipse: Ellipse,
    pub dist_state: DistanceState,
    /// Body axis one frame ago.
    pub prev_delta: f64,
    /// Body axis two frames ago.
    pub prev_prev_delta: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Number of clean observations folded into `mean_a`/`mean_b`.
    pub size_samples: u64,
    pub interacting: bool,
    /// Signed travel direction in `[0, 360)`; `None` until the axis has
    /// been disambiguated by an actual displacement.
    pub heading: Option<f64>,
}

impl TargetState {
    /// A fresh state centered on an observation. Size means start from the
    /// observation's ellipse and both past axes equal its orientation.
    pub fn from_observation(id: usize, obs: &Observation) -> Self {
        TargetState {
            id,
            lx: obs.x,
            ly: obs.y,
            ellipse: obs.ellipse,
            dist_state: DistanceState::default(),
            prev_delta: obs.ellipse.delta,
            prev_prev_delta: obs.ellipse.delta,
            mean_a: obs.ellipse.a,
            mean_b: obs.ellipse.b,
            size_samples: 1,
            interacting: false,
            heading: None,
        }
    }

    pub fn has_size_means(&self) -> bool {
        self.size_samples > 0 && self.mean_a > 0.0 && self.mean_b > 0.0
    }
}

/// One detected foreground blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub ellipse: Ellipse,
    pub pixel_count: usize,
    pub blob_id: usize,
    /// Member pixels as `(col, row)`.
    pub pixels: Vec<(u32, u32)>,
}

impl Observation {
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// One position + pose hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub lx: f64,
    pub ly: f64,
    pub ellipse: Ellipse,
    pub weight: f64,
}

/// Normalizes weights in place. Returns `false` (leaving weights untouched)
/// when none is positive.
pub fn normalize_weights(weights: &mut [f64]) -> bool {
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return false;
    }
    weights.iter_mut().for_each(|w| *w /= total);
    true
}
