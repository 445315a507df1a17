//! Hybrid motion model: a third-order accelerated model for the per-frame
//! movement distance combined with an attenuating, bend-signed turning model.
//!
//! A proposal is `previous position + rotate(heading + turn) * distance`,
//! where the distance is drawn around the extrapolated distance with spread
//! `sigma_v` and the turn is drawn from a two-component zero-mean Gaussian
//! mixture centered on the predicted turn. Time is measured in frames, so
//! every finite difference uses `dt = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{angle_diff, normalize_heading, wrap_signed, DistanceState, TargetState};

/// Which prediction rule the filter uses for distance and turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    /// Accelerated distance model plus attenuating turn prediction.
    #[default]
    Hybrid,
    /// Degraded baseline: repeat the last distance, no turn prediction.
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    /// Spread of the sampled movement distance, pixels.
    pub sigma_v: f64,
    /// Narrow turn component, degrees.
    pub sigma_theta1: f64,
    /// Wide turn component, degrees.
    pub sigma_theta2: f64,
    /// Probability mass of the narrow component.
    pub mix_weight1: f64,
    /// Ratio between consecutive turn magnitudes.
    pub attenuation_d: f64,
    pub model: MotionModel,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            sigma_v: 3.885,
            sigma_theta1: 1.478,
            sigma_theta2: 7.271,
            mix_weight1: 0.9,
            attenuation_d: 0.5,
            model: MotionModel::Hybrid,
        }
    }
}

impl MotionParams {
    /// The constant-velocity baseline: no acceleration term, no attenuated
    /// turn, turn noise as the only source of heading change.
    pub fn constant_velocity(&self) -> Self {
        MotionParams {
            attenuation_d: 0.0,
            model: MotionModel::ConstantVelocity,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_v, self.sigma_theta1, self.sigma_theta2];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "motion std-devs must be positive: {sigmas:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_weight1) {
            return Err(Error::Config("mix_weight1 must lie in [0, 1]".into()));
        }
        let d_ok = match self.model {
            MotionModel::Hybrid => self.attenuation_d > 0.0 && self.attenuation_d <= 1.0,
            MotionModel::ConstantVelocity => (0.0..=1.0).contains(&self.attenuation_d),
        };
        if !d_ok {
            return Err(Error::Config("attenuation_d must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Deterministic distance extrapolation `L + L' + L''/2`, clamped at zero.
pub fn predict_distance(ds: &DistanceState) -> f64 {
    (ds.distance + ds.velocity + 0.5 * ds.acceleration).max(0.0)
}

/// Distance prediction under the configured model.
pub fn predict_distance_with(model: MotionModel, ds: &DistanceState) -> f64 {
    match model {
        MotionModel::Hybrid => predict_distance(ds),
        MotionModel::ConstantVelocity => ds.distance.max(0.0),
    }
}

/// Folds a realized movement distance into the finite-difference state.
pub fn update_distance_state(ds: &DistanceState, observed: f64) -> DistanceState {
    let velocity = observed - ds.distance;
    DistanceState {
        distance: observed,
        velocity,
        acceleration: velocity - ds.velocity,
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    let z: f64 = rng.sample(StandardNormal);
    mean + sigma * z
}

/// Draws a movement distance from `N(l_pred, sigma_v^2)`, redrawing negative
/// values.
pub fn sample_distance<R: Rng + ?Sized>(l_pred: f64, params: &MotionParams, rng: &mut R) -> f64 {
    let mean = l_pred.max(0.0);
    if params.sigma_v == 0.0 {
        return mean;
    }
    loop {
        let l = gaussian(rng, mean, params.sigma_v);
        if l >= 0.0 {
            return l;
        }
    }
}

/// Below this centroid offset (pixels) a body counts as straight.
pub const STRAIGHT_BODY_OFFSET: f64 = 0.25;

/// Fraction of pixels averaged at each end to locate the body tips.
const TIP_FRACTION: f64 = 0.1;

/// Signed perpendicular offset of a blob's centroid from the chord joining
/// its tail and head tips. Positive means the centroid lies on the
/// counterclockwise side of the travel direction `heading`.
pub fn bend_offset(heading: f64, pixels: &[(u32, u32)]) -> Option<f64> {
    if pixels.len() < 10 {
        return None;
    }
    let (cx, cy) = crate::detection::centroid(pixels);
    let (uy, ux) = heading.to_radians().sin_cos();
    let mut proj: Vec<(f64, f64, f64)> = pixels
        .iter()
        .map(|&(x, y)| {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            ((px - cx) * ux + (py - cy) * uy, px, py)
        })
        .collect();
    proj.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = ((pixels.len() as f64 * TIP_FRACTION).ceil() as usize).max(1);
    let mean_of = |s: &[(f64, f64, f64)]| {
        let n = s.len() as f64;
        let (sx, sy) = s
            .iter()
            .fold((0.0, 0.0), |acc, p| (acc.0 + p.1, acc.1 + p.2));
        (sx / n, sy / n)
    };
    let tail = mean_of(&proj[..k]);
    let head = mean_of(&proj[proj.len() - k..]);
    let (chx, chy) = (head.0 - tail.0, head.1 - tail.1);
    let len = chx.hypot(chy);
    if len < 1e-9 {
        return None;
    }
    Some((chx * (cy - tail.1) - chy * (cx - tail.0)) / len)
}

/// Turn direction read from the body bend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnSign {
    /// +1 counterclockwise, -1 clockwise.
    pub sign: i8,
    /// `false` when the sign was drawn at random.
    pub confident: bool,
}

/// Reads the turn sign from the blob associated with a target: the side of
/// the tip-to-tip chord on which the centroid lies. Straight bodies, an
/// unknown heading, or a missing blob yield a random sign flagged as not
/// confident.
pub fn turning_sign<R: Rng + ?Sized>(
    state: &TargetState,
    blob: Option<&[(u32, u32)]>,
    rng: &mut R,
) -> TurnSign {
    let offset = match (state.heading, blob) {
        (Some(h), Some(px)) => bend_offset(h, px),
        _ => None,
    };
    match offset {
        Some(o) if o.abs() >= STRAIGHT_BODY_OFFSET => TurnSign {
            sign: if o > 0.0 { 1 } else { -1 },
            confident: true,
        },
        _ => TurnSign {
            sign: if rng.random_bool(0.5) { 1 } else { -1 },
            confident: false,
        },
    }
}

/// Predicted turn `sign * d * |delta_{t-1} - delta_{t-2}|`.
pub fn predict_turn(state: &TargetState, sign: i8, params: &MotionParams) -> f64 {
    match params.model {
        MotionModel::ConstantVelocity => 0.0,
        MotionModel::Hybrid => {
            sign as f64 * params.attenuation_d * angle_diff(state.prev_delta, state.prev_prev_delta)
        }
    }
}

/// Draws a turn from the two-component mixture centered on `theta_pred`.
pub fn sample_turn<R: Rng + ?Sized>(theta_pred: f64, params: &MotionParams, rng: &mut R) -> f64 {
    let sigma = if rng.random::<f64>() < params.mix_weight1 {
        params.sigma_theta1
    } else {
        params.sigma_theta2
    };
    gaussian(rng, theta_pred, sigma)
}

/// Moves `(x, y)` by `distance` along `heading + turn`.
pub fn propose_position(x: f64, y: f64, heading: f64, distance: f64, turn: f64) -> (f64, f64) {
    let (s, c) = (heading + turn).to_radians().sin_cos();
    (x + distance * c, y + distance * s)
}

/// Clamps a point into the image rectangle. The flag reports whether the
/// point had to move.
pub fn clamp_to_bounds(x: f64, y: f64, width: u32, height: u32) -> ((f64, f64), bool) {
    let cx = x.clamp(0.0, width as f64);
    let cy = y.clamp(0.0, height as f64);
    ((cx, cy), cx != x || cy != y)
}

/// Picks between the two travel directions of a body axis. A displacement of
/// at least `min_step` pixels decides; otherwise the previous heading does;
/// otherwise the direction stays unknown.
pub fn resolve_heading(
    axis_delta: f64,
    displacement: (f64, f64),
    previous: Option<f64>,
    min_step: f64,
) -> Option<f64> {
    let reference = if displacement.0.hypot(displacement.1) >= min_step {
        Some(displacement.1.atan2(displacement.0).to_degrees())
    } else {
        previous
    }?;
    let fwd = normalize_heading(axis_delta);
    let back = normalize_heading(axis_delta + 180.0);
    Some(
        if wrap_signed(fwd - reference).abs() <= wrap_signed(back - reference).abs() {
            fwd
        } else {
            back
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Ellipse, Observation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds(distance: f64, velocity: f64, acceleration: f64) -> DistanceState {
        DistanceState {
            distance,
            velocity,
            acceleration,
        }
    }

    fn state_with_angles(prev: f64, prev_prev: f64) -> TargetState {
        let e = Ellipse::new(50.0, 50.0, 10.0, 3.0, prev).unwrap();
        let obs = Observation {
            x: 50.0,
            y: 50.0,
            ellipse: e,
            pixel_count: 100,
            blob_id: 0,
            pixels: vec![],
        };
        let mut s = TargetState::from_observation(0, &obs);
        s.prev_prev_delta = prev_prev;
        s
    }

    #[test]
    fn distance_prediction_examples() {
        assert_eq!(predict_distance(&ds(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(predict_distance(&ds(5.0, 2.0, 0.0)), 7.0);
        assert_eq!(predict_distance(&ds(5.0, 2.0, 2.0)), 8.0);
        assert_eq!(predict_distance(&ds(1.0, -5.0, 0.0)), 0.0);
        assert_eq!(
            predict_distance_with(MotionModel::ConstantVelocity, &ds(5.0, 2.0, 2.0)),
            5.0
        );
    }

    #[test]
    fn distance_state_examples() {
        assert_eq!(
            update_distance_state(&ds(5.0, 1.0, 0.0), 7.0),
            ds(7.0, 2.0, 1.0)
        );
        assert_eq!(
            update_distance_state(&ds(0.0, 0.0, 0.0), 0.0),
            ds(0.0, 0.0, 0.0)
        );
        // Difference table for 0, 3, 6, 9:
        //   L:   0 3 6 9
        //   L':  0 3 3 3
        //   L'': 0 3 0 0
        let s = [0.0, 3.0, 6.0, 9.0]
            .iter()
            .fold(DistanceState::default(), |s, &l| {
                update_distance_state(&s, l)
            });
        assert_eq!(s, ds(9.0, 3.0, 0.0));
    }

    #[test]
    fn linear_sequences_are_predicted_exactly() {
        let mut s = DistanceState::default();
        for t in 0..12 {
            let l = 4.0 + 1.5 * t as f64;
            if t >= 3 {
                assert!((predict_distance(&s) - l).abs() < 1e-9, "t={t}");
            }
            s = update_distance_state(&s, l);
        }
    }

    #[test]
    fn quadratic_sequence_prediction() {
        // L_t = 2 + 3t + t^2/2: backward differences give L' = 2.5 + t and
        // L'' = 1, so the prediction is L_t + 3 + t.
        let l = |t: f64| 2.0 + 3.0 * t + 0.5 * t * t;
        let mut s = DistanceState::default();
        for t in 0..12 {
            if t >= 3 {
                let prev = (t - 1) as f64;
                assert!((predict_distance(&s) - (l(prev) + 3.0 + prev)).abs() < 1e-9);
            }
            s = update_distance_state(&s, l(t as f64));
        }
    }

    #[test]
    fn zero_noise_sampling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MotionParams {
            sigma_v: 0.0,
            sigma_theta1: 0.0,
            sigma_theta2: 0.0,
            ..Default::default()
        };
        assert_eq!(sample_distance(12.5, &p, &mut rng), 12.5);
        assert_eq!(sample_turn(-4.0, &p, &mut rng), -4.0);
    }

    #[test]
    fn distance_samples_match_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MotionParams::default();
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_distance(20.0, &p, &mut rng))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 20.0).abs() < 0.05, "mean {mean}");
        assert!((sd - 3.885).abs() < 0.05, "sd {sd}");
        assert!(xs.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn turn_samples_match_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MotionParams::default();
        let n = 100_000;
        let mut abs: Vec<f64> = (0..n)
            .map(|_| sample_turn(0.0, &p, &mut rng).abs())
            .collect();
        abs.sort_by(f64::total_cmp);
        assert!(abs[(0.9 * n as f64) as usize] <= 15.0);
        let mean = (0..n).map(|_| sample_turn(8.0, &p, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 8.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn turn_prediction_examples() {
        let p = MotionParams::default();
        assert_eq!(predict_turn(&state_with_angles(30.0, 30.0), 1, &p), 0.0);
        assert_eq!(predict_turn(&state_with_angles(30.0, 30.0), -1, &p), 0.0);
        assert_eq!(predict_turn(&state_with_angles(30.0, 10.0), 1, &p), 10.0);
        assert_eq!(predict_turn(&state_with_angles(30.0, 10.0), -1, &p), -10.0);
        assert_eq!(predict_turn(&state_with_angles(5.0, 165.0), 1, &p), 10.0);
        assert_eq!(
            predict_turn(&state_with_angles(30.0, 10.0), 1, &p.constant_velocity()),
            0.0
        );
    }

    #[test]
    fn repeated_turn_prediction_is_geometric() {
        let p = MotionParams::default();
        let mut s = state_with_angles(40.0, 0.0);
        let mut turns = Vec::new();
        for _ in 0..6 {
            let t = predict_turn(&s, 1, &p);
            turns.push(t);
            s.prev_prev_delta = s.prev_delta;
            s.prev_delta = crate::types::axis(s.prev_delta + t);
        }
        for w in turns.windows(2) {
            assert!((w[1] / w[0] - p.attenuation_d).abs() < 1e-9);
        }
    }

    #[test]
    fn position_proposal_examples() {
        assert_eq!(propose_position(50.0, 50.0, 33.0, 0.0, 4.0), (50.0, 50.0));
        let (x, y) = propose_position(50.0, 50.0, 0.0, 10.0, 0.0);
        assert!((x - 60.0).abs() < 1e-12 && (y - 50.0).abs() < 1e-12);
        let (x, y) = propose_position(50.0, 50.0, 90.0, 10.0, 0.0);
        assert!((x - 50.0).abs() < 1e-12 && (y - 60.0).abs() < 1e-12);
        assert_eq!(clamp_to_bounds(-3.0, 12.0, 100, 100), ((0.0, 12.0), true));
    }

    #[test]
    fn proposals_rotate_with_heading() {
        let (x0, y0) = (40.0, 70.0);
        let phi = 37.0f64;
        for (l, t) in [(3.0, 2.0), (12.0, -9.0), (7.5, 40.0)] {
            let (ax, ay) = propose_position(x0, y0, 10.0, l, t);
            let (bx, by) = propose_position(x0, y0, 10.0 + phi, l, t);
            let (s, c) = phi.to_radians().sin_cos();
            let rx = x0 + (ax - x0) * c - (ay - y0) * s;
            let ry = y0 + (ax - x0) * s + (ay - y0) * c;
            assert!((rx - bx).abs() < 1e-9 && (ry - by).abs() < 1e-9);
        }
    }

    #[test]
    fn heading_resolution() {
        assert_eq!(resolve_heading(10.0, (-5.0, -1.0), None, 0.5), Some(190.0));
        assert_eq!(resolve_heading(10.0, (5.0, 1.0), None, 0.5), Some(10.0));
        assert_eq!(resolve_heading(10.0, (0.0, 0.0), None, 0.5), None);
        assert_eq!(
            resolve_heading(12.0, (0.1, 0.0), Some(185.0), 0.5),
            Some(192.0)
        );
    }

    #[test]
    fn straight_body_gets_random_sign() {
        let px: Vec<_> = (0..30).flat_map(|x| (0..6).map(move |y| (x, y))).collect();
        let mut st = state_with_angles(0.0, 0.0);
        st.heading = Some(0.0);
        let off = bend_offset(0.0, &px).unwrap();
        assert!(off.abs() < STRAIGHT_BODY_OFFSET);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let signs: Vec<i8> = (0..200)
            .map(|_| turning_sign(&st, Some(&px), &mut rng))
            .inspect(|s| assert!(!s.confident))
            .map(|s| s.sign)
            .collect();
        assert!(signs.contains(&1) && signs.contains(&-1));
    }

    #[test]
    fn missing_blob_is_low_confidence() {
        let mut st = state_with_angles(0.0, 0.0);
        st.heading = Some(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(!turning_sign(&st, None, &mut rng).confident);
    }
}
