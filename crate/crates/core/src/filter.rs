//! Per-target particle filter: propose with the hybrid motion model, pose
//! with the appearance model, weigh by foreground coverage, estimate the
//! weighted position, and resample systematically when the effective sample
//! size collapses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::appearance::{self, AppearanceParams};
use crate::error::{Error, Result};
use crate::mask::Foreground;
use crate::motion::{self, MotionParams};
use crate::types::{axis, normalize_heading, Ellipse, Observation, Particle, TargetState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Gating radius is `gating_sigmas * sigma_v + predicted distance +
    /// mean semi-length`.
    pub gating_sigmas: f64,
    /// Resample when the effective sample size drops below this fraction of
    /// the particle count.
    pub resample_threshold: f64,
    /// Linking-error deviation in multiples of the mean semi-length.
    pub error_deviation_lengths: f64,
    /// Exponent applied to the coverage fraction before it multiplies the
    /// importance weight.
    pub likelihood_exponent: f64,
    /// Frames of pure prediction before a target is declared dropped.
    pub max_coast: u32,
    pub min_blob_area: usize,
    /// Displacement (pixels) needed before it may flip the travel heading.
    pub min_heading_step: f64,
    /// Std-dev (pixels) of isotropic jitter added to every proposal.
    pub roughening: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 200,
            gating_sigmas: 3.0,
            resample_threshold: 0.5,
            error_deviation_lengths: 2.0,
            likelihood_exponent: 16.0,
            max_coast: 10,
            min_blob_area: crate::detection::DEFAULT_MIN_BLOB_AREA,
            min_heading_step: 0.5,
            roughening: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 10 {
            return Err(Error::Config("n_particles must be at least 10".into()));
        }
        let positive = [
            self.gating_sigmas,
            self.resample_threshold,
            self.error_deviation_lengths,
            self.likelihood_exponent,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("filter thresholds must be positive".into()));
        }
        if !(self.roughening.is_finite() && self.roughening >= 0.0) {
            return Err(Error::Config("roughening must be non-negative".into()));
        }
        Ok(())
    }
}

/// Model parameters a filter step needs, bundled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepParams {
    pub motion: MotionParams,
    pub appearance: AppearanceParams,
    pub filter: FilterConfig,
}

/// What one filter step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub target_id: usize,
    pub x: f64,
    pub y: f64,
    pub ellipse: Ellipse,
    /// Largest raw coverage fraction among this frame's particles.
    pub weight_max: f64,
    pub interacting: bool,
    /// Every particle scored zero; the position was extrapolated.
    pub lost: bool,
    /// Lost for longer than `max_coast` frames.
    pub dropped: bool,
    /// Some proposal left the image and was clamped.
    pub clamped: bool,
    pub ess: f64,
    pub resampled: bool,
}

/// Proposed particles for one frame, before weighing.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub particles: Vec<Particle>,
    /// Deterministic motion prediction of the target position.
    pub predicted: (f64, f64),
    pub predicted_distance: f64,
    pub clamped: bool,
}

impl Proposal {
    /// Raw coverage fraction of every particle against a foreground view.
    pub fn coverage<F: Foreground + ?Sized>(&self, fg: &F) -> Vec<f64> {
        self.particles
            .iter()
            .map(|p| appearance::weigh_particle(p, fg))
            .collect()
    }
}

/// Low-variance resampling: `n` evenly spaced pointers offset by `u0` in
/// `[0, 1/n)` walk the cumulative weights. Returns the selected indices.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let step = 1.0 / n as f64;
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 * step;
        while u > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// `1 / sum(w^2)` over normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// The observation nearest to `(x, y)`, if it lies within `radius`.
pub fn associate_nn(
    x: f64,
    y: f64,
    observations: &[Observation],
    radius: f64,
) -> Option<&Observation> {
    observations
        .iter()
        .map(|o| (o.distance_to(x, y), o))
        .filter(|(d, _)| *d <= radius)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.blob_id.cmp(&b.1.blob_id)))
        .map(|(_, o)| o)
}

/// Whether the estimate has drifted strictly farther than `error_deviation`
/// from its associated observation.
pub fn check_linking_error(state: &TargetState, obs: &Observation, error_deviation: f64) -> bool {
    obs.distance_to(state.lx, state.ly) > error_deviation
}

/// Seeds a filter's random stream from the global seed and the target id.
pub fn target_rng(global_seed: u64, target_id: usize) -> ChaCha8Rng {
    let mixed = global_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((target_id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Particle filter tracking a single target.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    pub state: TargetState,
    particles: Vec<Particle>,
    rng: ChaCha8Rng,
    /// Turn sign read from the last clean blob, if it was decisive.
    turn_sign: Option<i8>,
    coast: u32,
    /// Centroid of the previous frame's clean observation.
    last_clean: Option<(f64, f64)>,
}

impl ParticleFilter {
    /// Starts a filter on an observation with every particle at its centroid.
    pub fn new(state: TargetState, n_particles: usize, rng: ChaCha8Rng) -> Self {
        let start = (state.lx, state.ly);
        let particle = Particle {
            lx: state.lx,
            ly: state.ly,
            ellipse: state.ellipse,
            weight: 1.0 / n_particles as f64,
        };
        ParticleFilter {
            state,
            particles: vec![particle; n_particles],
            rng,
            turn_sign: None,
            coast: 0,
            last_clean: Some(start),
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn coasting_frames(&self) -> u32 {
        self.coast
    }

    pub fn is_dropped(&self, cfg: &FilterConfig) -> bool {
        self.coast > cfg.max_coast
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Gating radius around the predicted position; it widens by one base
    /// radius per coasted frame.
    pub fn gating_radius(&self, params: &StepParams, predicted_distance: f64) -> f64 {
        let base = params.filter.gating_sigmas * params.motion.sigma_v
            + predicted_distance
            + self.state.mean_a;
        base * (1.0 + self.coast as f64)
    }

    /// Deterministic next position under the motion model (no noise).
    pub fn predicted_position(&self, motion: &MotionParams) -> (f64, f64) {
        let l = motion::predict_distance_with(motion.model, &self.state.dist_state);
        match self.state.heading {
            Some(h) => motion::propose_position(self.state.lx, self.state.ly, h, l, 0.0),
            None => (self.state.lx, self.state.ly),
        }
    }

    /// Moves every particle with the motion model and draws fresh poses.
    pub fn propose(&mut self, params: &StepParams, bounds: (u32, u32)) -> Result<Proposal> {
        let st = &self.state;
        if !st.has_size_means() {
            return Err(Error::Initialization(format!(
                "target {} stepped before initialization",
                st.id
            )));
        }
        let interacting = st.interacting;
        let l_pred = motion::predict_distance_with(params.motion.model, &st.dist_state);
        let mut clamped = false;
        let n = self.particles.len();
        let mut out = Vec::with_capacity(n);
        for (i, p) in self.particles.iter().enumerate() {
            let heading = match st.heading {
                Some(h) => h,
                // Unknown travel direction: half the cloud each way along
                // the body axis.
                None => normalize_heading(st.prev_delta + if i % 2 == 0 { 0.0 } else { 180.0 }),
            };
            let theta_pred = if interacting {
                0.0
            } else {
                let sign = match self.turn_sign {
                    Some(s) => s,
                    None => {
                        if self.rng.random_bool(0.5) {
                            1
                        } else {
                            -1
                        }
                    }
                };
                motion::predict_turn(st, sign, &params.motion)
            };
            let l = motion::sample_distance(l_pred, &params.motion, &mut self.rng);
            let theta = motion::sample_turn(theta_pred, &params.motion, &mut self.rng);
            let (mut x, mut y) = motion::propose_position(p.lx, p.ly, heading, l, theta);
            if params.filter.roughening > 0.0 {
                let (zx, zy): (f64, f64) = (
                    self.rng.sample(StandardNormal),
                    self.rng.sample(StandardNormal),
                );
                x += params.filter.roughening * zx;
                y += params.filter.roughening * zy;
            }
            let ((x, y), c) = motion::clamp_to_bounds(x, y, bounds.0, bounds.1);
            clamped |= c;
            let delta = appearance::sample_inclination(
                st.prev_delta,
                theta_pred,
                &params.appearance,
                &mut self.rng,
            );
            out.push(Particle {
                lx: x,
                ly: y,
                ellipse: Ellipse::new(x, y, st.mean_a, st.mean_b, delta)?,
                weight: 0.0,
            });
        }
        let predicted = if interacting {
            (st.lx, st.ly)
        } else {
            self.predicted_position(&params.motion)
        };
        let (predicted, _) = motion::clamp_to_bounds(predicted.0, predicted.1, bounds.0, bounds.1);
        Ok(Proposal {
            particles: out,
            predicted,
            predicted_distance: l_pred,
            clamped,
        })
    }

    /// Folds coverage weights into the filter and moves the estimate.
    ///
    /// `clean` is the observation associated one-to-one with this target, if
    /// any; it supplies the body axis for the turn chain and refreshes the
    /// size means. Without positive coverage the target coasts on the motion
    /// prediction.
    pub fn update(
        &mut self,
        proposal: Proposal,
        coverage: &[f64],
        clean: Option<&Observation>,
        params: &StepParams,
        bounds: (u32, u32),
    ) -> Result<StepReport> {
        debug_assert_eq!(coverage.len(), proposal.particles.len());
        let gamma = params.filter.likelihood_exponent;
        let mut weights: Vec<f64> = self
            .particles
            .iter()
            .zip(coverage)
            .map(|(prev, &c)| prev.weight * c.powf(gamma))
            .collect();
        let weight_max = coverage.iter().cloned().fold(0.0, f64::max);
        let interacting = self.state.interacting;

        if !crate::types::normalize_weights(&mut weights) {
            // Zero likelihood everywhere: extrapolate and restart the cloud
            // at the prediction.
            let (px, py) = proposal.predicted;
            self.state.lx = px;
            self.state.ly = py;
            self.state.ellipse = self.state.ellipse.moved_to(px, py);
            let w = 1.0 / self.particles.len() as f64;
            for p in &mut self.particles {
                *p = Particle {
                    lx: px,
                    ly: py,
                    ellipse: self.state.ellipse,
                    weight: w,
                };
            }
            self.coast += 1;
            self.last_clean = None;
            return Ok(StepReport {
                target_id: self.state.id,
                x: px,
                y: py,
                ellipse: self.state.ellipse,
                weight_max,
                interacting,
                lost: true,
                dropped: self.coast > params.filter.max_coast,
                clamped: proposal.clamped,
                ess: 0.0,
                resampled: false,
            });
        }

        let mut particles = proposal.particles;
        for (p, &w) in particles.iter_mut().zip(&weights) {
            p.weight = w;
        }
        let (ex, ey) = particles.iter().fold((0.0, 0.0), |(sx, sy), p| {
            (sx + p.weight * p.lx, sy + p.weight * p.ly)
        });
        let ((ex, ey), _) = motion::clamp_to_bounds(ex, ey, bounds.0, bounds.1);
        let best = particles
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(b.0.cmp(&a.0)))
            .map(|(_, p)| p.ellipse)
            .expect("non-empty particle set");

        // Realized movement: between clean observed centroids when both
        // frames have one, else between estimates.
        let displacement = match (interacting, clean, self.last_clean) {
            (false, Some(obs), Some((px, py))) => (obs.x - px, obs.y - py),
            _ => (ex - self.state.lx, ey - self.state.ly),
        };
        self.last_clean = match (interacting, clean) {
            (false, Some(obs)) => Some((obs.x, obs.y)),
            _ => None,
        };
        let st = &mut self.state;
        st.lx = ex;
        st.ly = ey;
        st.ellipse = best;
        let new_axis = match (interacting, clean) {
            (false, Some(obs)) => obs.ellipse.delta,
            _ => best.delta,
        };
        st.prev_prev_delta = st.prev_delta;
        st.prev_delta = new_axis;
        if !interacting {
            let moved = displacement.0.hypot(displacement.1);
            st.dist_state = motion::update_distance_state(&st.dist_state, moved);
            st.heading = motion::resolve_heading(
                new_axis,
                displacement,
                st.heading,
                params.filter.min_heading_step,
            );
        } else if st.heading.is_some() {
            // Speed stays frozen while merged; the travel direction follows
            // the best body axis without flipping.
            st.heading = motion::resolve_heading(new_axis, (0.0, 0.0), st.heading, f64::INFINITY);
        }
        if let (false, Some(obs)) = (interacting, clean) {
            *st = appearance::update_size_means(st, obs, &params.appearance)?;
            let sign = motion::turning_sign(st, Some(&obs.pixels), &mut self.rng);
            self.turn_sign = sign.confident.then_some(sign.sign);
        } else {
            self.turn_sign = None;
        }

        let ess = effective_sample_size(&weights);
        let n = particles.len();
        let resampled = ess < params.filter.resample_threshold * n as f64;
        if resampled {
            let u0 = self.rng.random::<f64>() / n as f64;
            let w = 1.0 / n as f64;
            particles = systematic_resample(&weights, u0)
                .into_iter()
                .map(|i| Particle {
                    weight: w,
                    ..particles[i]
                })
                .collect();
        }
        self.particles = particles;
        self.coast = 0;

        Ok(StepReport {
            target_id: self.state.id,
            x: ex,
            y: ey,
            ellipse: best,
            weight_max,
            interacting,
            lost: false,
            dropped: false,
            clamped: proposal.clamped,
            ess,
            resampled,
        })
    }

    /// Propose, weigh against `fg`, and update, in one call.
    pub fn step<F: Foreground + ?Sized>(
        &mut self,
        fg: &F,
        clean: Option<&Observation>,
        params: &StepParams,
    ) -> Result<StepReport> {
        let bounds = (fg.width(), fg.height());
        let proposal = self.propose(params, bounds)?;
        let coverage = proposal.coverage(fg);
        self.update(proposal, &coverage, clean, params, bounds)
    }

    /// Restarts the cloud on an observation, keeping the motion chain. The
    /// body axis chain restarts on the observation's orientation and the
    /// heading is re-derived from `heading_hint` when given.
    pub fn reinitialize_on(&mut self, obs: &Observation, heading_hint: Option<f64>) {
        let st = &mut self.state;
        st.lx = obs.x;
        st.ly = obs.y;
        st.ellipse = obs.ellipse;
        st.prev_delta = obs.ellipse.delta;
        st.prev_prev_delta = obs.ellipse.delta;
        st.heading = heading_hint
            .and_then(|h| motion::resolve_heading(obs.ellipse.delta, (0.0, 0.0), Some(h), 1.0));
        self.turn_sign = None;
        self.last_clean = Some((obs.x, obs.y));
        self.reset_cloud();
    }

    /// Restarts on an observation after the estimate went astray. The travel
    /// direction is taken from the jump to the observation when it is at
    /// least a body width long, and the distance chain drops its
    /// derivatives.
    pub fn recover_on(&mut self, obs: &Observation) {
        let (dx, dy) = (obs.x - self.state.lx, obs.y - self.state.ly);
        let hint = if dx.hypot(dy) >= 2.0 * self.state.mean_b {
            Some(normalize_heading(dy.atan2(dx).to_degrees()))
        } else {
            self.state.heading
        };
        let ds = &mut self.state.dist_state;
        ds.velocity = 0.0;
        ds.acceleration = 0.0;
        self.reinitialize_on(obs, hint);
    }

    /// Restarts the cloud at an arbitrary position, keeping pose and motion.
    pub fn reinitialize_at(&mut self, x: f64, y: f64) {
        self.state.lx = x;
        self.state.ly = y;
        self.state.ellipse = self.state.ellipse.moved_to(x, y);
        self.last_clean = None;
        self.reset_cloud();
    }

    fn reset_cloud(&mut self) {
        let n = self.particles.len();
        let p = Particle {
            lx: self.state.lx,
            ly: self.state.ly,
            ellipse: self.state.ellipse,
            weight: 1.0 / n as f64,
        };
        self.particles = vec![p; n];
        self.coast = 0;
    }

    /// Body-axis orientation the filter would report for its current pose.
    pub fn axis(&self) -> f64 {
        axis(self.state.ellipse.delta)
    }
}
