//! Ellipse appearance model: pose sampling on proposed positions and the
//! foreground-coverage particle weight `W / S`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{Foreground, LabelImage};
use crate::types::{axis, Ellipse, Observation, Particle, TargetState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceParams {
    /// Spread of sampled inclinations, degrees.
    pub sigma_delta: f64,
    /// Exponential-average rate for the body size means.
    pub mean_update_rate: f64,
    /// Use the cumulative mean of every clean observation instead of the
    /// exponential average.
    pub cumulative_means: bool,
}

impl Default for AppearanceParams {
    fn default() -> Self {
        AppearanceParams {
            sigma_delta: 1.478,
            mean_update_rate: 0.1,
            cumulative_means: false,
        }
    }
}

impl AppearanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_delta.is_finite() && self.sigma_delta > 0.0) {
            return Err(Error::Config("sigma_delta must be positive".into()));
        }
        if !(self.mean_update_rate > 0.0 && self.mean_update_rate <= 1.0) {
            return Err(Error::Config("mean_update_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws an inclination from `N(prev_delta + theta_t, sigma_delta^2)`,
/// reduced to `[0, 180)`.
pub fn sample_inclination<R: Rng + ?Sized>(
    prev_delta: f64,
    theta_t: f64,
    params: &AppearanceParams,
    rng: &mut R,
) -> f64 {
    let mean = prev_delta + theta_t;
    if params.sigma_delta == 0.0 {
        return axis(mean);
    }
    let z: f64 = rng.sample(StandardNormal);
    axis(mean + params.sigma_delta * z)
}

/// Calls `visit(col, row)` for every pixel whose center lies inside the
/// ellipse, including pixels outside any image.
pub fn for_each_interior_pixel(ellipse: &Ellipse, mut visit: impl FnMut(i64, i64)) {
    let test = ellipse.interior();
    let (_, hy) = ellipse.half_extents();
    let (s, c) = ellipse.delta.to_radians().sin_cos();
    let (ia2, ib2) = (1.0 / (ellipse.a * ellipse.a), 1.0 / (ellipse.b * ellipse.b));
    let qa = c * c * ia2 + s * s * ib2;
    let qb_coef = 2.0 * c * s * (ia2 - ib2);
    let qc_coef = s * s * ia2 + c * c * ib2;

    let row_lo = (ellipse.cy - hy - 0.5).floor() as i64 - 1;
    let row_hi = (ellipse.cy + hy - 0.5).ceil() as i64 + 1;
    for row in row_lo..=row_hi {
        let yc = row as f64 + 0.5;
        let dy = yc - ellipse.cy;
        let qb = qb_coef * dy;
        let qc = qc_coef * dy * dy - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        // Span of x offsets solving the row's quadratic; a negative
        // discriminant still gets the vertex checked so rounding at the
        // tangent row cannot drop a pixel.
        let (x1, x2) = if disc >= 0.0 {
            let r = disc.sqrt();
            ((-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa))
        } else {
            let v = -qb / (2.0 * qa);
            (v, v)
        };
        let col_lo = (ellipse.cx + x1 - 0.5).floor() as i64 - 1;
        let col_hi = (ellipse.cx + x2 - 0.5).ceil() as i64 + 1;
        for col in col_lo..=col_hi {
            if test.contains(col as f64 + 0.5, yc) {
                visit(col, row);
            }
        }
    }
}

/// Foreground count `W` and area `S`, both counted over pixel centers inside
/// the ellipse. Pixels outside the image add to `S` only.
pub fn overlap_counts<F: Foreground + ?Sized>(ellipse: &Ellipse, fg: &F) -> (u64, u64) {
    let (w, h) = (fg.width() as i64, fg.height() as i64);
    let (mut inside, mut hits) = (0u64, 0u64);
    for_each_interior_pixel(ellipse, |col, row| {
        inside += 1;
        if row >= 0 && row < h && col >= 0 && col < w && fg.is_foreground(col as u32, row as u32) {
            hits += 1;
        }
    });
    (hits, inside)
}

/// Ellipse area `S` and the foreground hits split by blob, as
/// `(blob_id, hits)` pairs sorted by blob id.
pub fn overlap_by_blob(ellipse: &Ellipse, labels: &LabelImage) -> (u64, Vec<(usize, u64)>) {
    let (w, h) = (labels.width as i64, labels.height as i64);
    let mut inside = 0u64;
    let mut per_blob: Vec<(usize, u64)> = Vec::new();
    for_each_interior_pixel(ellipse, |col, row| {
        inside += 1;
        if row >= 0 && row < h && col >= 0 && col < w {
            if let Some(b) = labels.blob_at(col as u32, row as u32) {
                match per_blob.iter_mut().find(|(id, _)| *id == b) {
                    Some(entry) => entry.1 += 1,
                    None => per_blob.push((b, 1)),
                }
            }
        }
    });
    per_blob.sort_unstable();
    (inside, per_blob)
}

/// Fraction of the ellipse's pixel centers that land on foreground.
pub fn weigh_ellipse<F: Foreground + ?Sized>(ellipse: &Ellipse, fg: &F) -> f64 {
    let (hits, area) = overlap_counts(ellipse, fg);
    if area == 0 {
        0.0
    } else {
        hits as f64 / area as f64
    }
}

pub fn weigh_particle<F: Foreground + ?Sized>(particle: &Particle, fg: &F) -> f64 {
    weigh_ellipse(&particle.ellipse, fg)
}

/// Wraps each proposed position in the target's mean-size ellipse with a
/// freshly sampled inclination. Weights are left at zero.
pub fn build_particle_poses<R: Rng + ?Sized>(
    proposals: &[(f64, f64)],
    state: &TargetState,
    theta_t: f64,
    params: &AppearanceParams,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    if !state.has_size_means() {
        return Err(Error::Initialization(format!(
            "target {} has no size means yet",
            state.id
        )));
    }
    proposals
        .iter()
        .map(|&(lx, ly)| {
            let delta = sample_inclination(state.prev_delta, theta_t, params, rng);
            Ok(Particle {
                lx,
                ly,
                ellipse: Ellipse::new(lx, ly, state.mean_a, state.mean_b, delta)?,
                weight: 0.0,
            })
        })
        .collect()
}

/// Folds a clean observation's axes into the running size means. The first
/// observation initializes them directly.
pub fn update_size_means(
    state: &TargetState,
    obs: &Observation,
    params: &AppearanceParams,
) -> Result<TargetState> {
    if state.interacting {
        return Err(Error::Contract(format!(
            "size means of target {} must not change during interaction",
            state.id
        )));
    }
    let mut next = state.clone();
    let (a, b) = (obs.ellipse.a, obs.ellipse.b);
    if state.size_samples == 0 {
        next.mean_a = a;
        next.mean_b = b;
    } else {
        let rate = if params.cumulative_means {
            1.0 / (state.size_samples as f64 + 1.0)
        } else {
            params.mean_update_rate
        };
        next.mean_a = (1.0 - rate) * state.mean_a + rate * a;
        next.mean_b = (1.0 - rate) * state.mean_b + rate * b;
    }
    if next.mean_a < next.mean_b {
        std::mem::swap(&mut next.mean_a, &mut next.mean_b);
    }
    next.size_samples += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::FrameMask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(a: f64, b: f64) -> Observation {
        Observation {
            x: 0.0,
            y: 0.0,
            ellipse: Ellipse::new(0.0, 0.0, a, b, 0.0).unwrap(),
            pixel_count: 50,
            blob_id: 0,
            pixels: vec![],
        }
    }

    fn fresh_state() -> TargetState {
        let mut s = TargetState::from_observation(0, &obs(20.0, 5.0));
        s.size_samples = 0;
        s.mean_a = 0.0;
        s.mean_b = 0.0;
        s
    }

    #[test]
    fn weight_extremes() {
        let mut full = FrameMask::empty(100, 100, 0);
        full.pixels.iter_mut().for_each(|p| *p = 1);
        let e = Ellipse::new(50.0, 50.0, 15.0, 6.0, 33.0).unwrap();
        assert_eq!(weigh_ellipse(&e, &full), 1.0);
        assert_eq!(weigh_ellipse(&e, &FrameMask::empty(100, 100, 0)), 0.0);
    }

    #[test]
    fn half_plane_gives_half() {
        let mut m = FrameMask::empty(100, 100, 0);
        for y in 0..100 {
            for x in 0..50 {
                m.set(x, y, true);
            }
        }
        let e = Ellipse::new(50.0, 50.0, 20.0, 8.0, 25.0).unwrap();
        let w = weigh_ellipse(&e, &m);
        // Brute-force count on the same grid.
        let (mut hit, mut all) = (0, 0);
        for y in 0..100u32 {
            for x in 0..100u32 {
                if e.contains_pixel(x as i64, y as i64) {
                    all += 1;
                    hit += m.get(x, y) as u32;
                }
            }
        }
        assert_eq!(w, hit as f64 / all as f64);
        assert!((w - 0.5).abs() < 0.05, "w={w}");
    }

    #[test]
    fn off_image_area_counts_in_denominator() {
        let mut full = FrameMask::empty(40, 40, 0);
        full.pixels.iter_mut().for_each(|p| *p = 1);
        let e = Ellipse::new(0.0, 20.0, 10.0, 10.0, 0.0).unwrap();
        let (hits, area) = overlap_counts(&e, &full);
        assert!(hits < area);
        assert!((hits as f64 / area as f64 - 0.5).abs() < 0.06);
    }

    #[test]
    fn inclination_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p0 = AppearanceParams {
            sigma_delta: 0.0,
            ..Default::default()
        };
        assert_eq!(sample_inclination(40.0, 10.0, &p0, &mut rng), 50.0);
        let p = AppearanceParams::default();
        for _ in 0..1000 {
            let d = sample_inclination(175.0, 10.0, &p, &mut rng);
            assert!(crate::types::angle_diff(d, 5.0) < 10.0);
        }
    }

    #[test]
    fn poses_pass_through_size_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = TargetState::from_observation(0, &obs(20.0, 5.0));
        let ps =
            build_particle_poses(&[(10.0, 12.0)], &s, 0.0, &Default::default(), &mut rng).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!((ps[0].ellipse.a, ps[0].ellipse.b), (20.0, 5.0));
        assert_eq!((ps[0].lx, ps[0].ly), (10.0, 12.0));
        assert!(
            build_particle_poses(&[], &s, 0.0, &Default::default(), &mut rng)
                .unwrap()
                .is_empty()
        );
        assert!(matches!(
            build_particle_poses(
                &[(1.0, 1.0)],
                &fresh_state(),
                0.0,
                &Default::default(),
                &mut rng
            ),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn size_means() {
        let p = AppearanceParams::default();
        let s = update_size_means(&fresh_state(), &obs(20.0, 5.0), &p).unwrap();
        assert_eq!((s.mean_a, s.mean_b), (20.0, 5.0));
        let s = update_size_means(&s, &obs(30.0, 5.0), &p).unwrap();
        assert!((s.mean_a - 21.0).abs() < 1e-12);
        let mut c = s.clone();
        for _ in 0..400 {
            c = update_size_means(&c, &obs(18.0, 4.0), &p).unwrap();
        }
        assert!((c.mean_a - 18.0).abs() < 1e-9 && (c.mean_b - 4.0).abs() < 1e-9);
        let mut busy = s;
        busy.interacting = true;
        assert!(matches!(
            update_size_means(&busy, &obs(20.0, 5.0), &p),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cumulative_means_average_history() {
        let p = AppearanceParams {
            cumulative_means: true,
            ..Default::default()
        };
        let mut s = fresh_state();
        for a in [10.0, 20.0, 30.0] {
            s = update_size_means(&s, &obs(a, 2.0), &p).unwrap();
        }
        assert!((s.mean_a - 20.0).abs() < 1e-12);
    }
}
