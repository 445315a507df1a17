//! Motion statistics from trajectories: per-frame distances and turning
//! angles, unit-bin histograms, and the Gaussian fits that turn them back
//! into motion parameters.

use crate::error::{Error, Result};
use crate::motion::MotionParams;
use crate::types::{signed_axis_diff, wrap_signed};

/// Where the heading used for turning angles comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadingMode {
    /// atan2 of consecutive position differences.
    #[default]
    Displacement,
    /// The fitted body axis δ; turns are axis changes folded into
    /// [-90, 90).
    Axis,
}

/// One trajectory sample: position and body-axis angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub delta: f64,
}

/// Per-frame movement distances and signed turning angles (degrees).
///
/// In displacement mode a zero-length step keeps the previous heading, so
/// it contributes a zero turn.
pub fn trajectory_deltas(points: &[TrackPoint], mode: HeadingMode) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "trajectory needs at least 3 frames, got {}",
            points.len()
        )));
    }
    let distances: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .collect();
    let turns = match mode {
        HeadingMode::Displacement => {
            let mut headings: Vec<f64> = Vec::with_capacity(points.len() - 1);
            for w in points.windows(2) {
                let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
                let h = if dx == 0.0 && dy == 0.0 {
                    headings.last().copied().unwrap_or(0.0)
                } else {
                    dy.atan2(dx).to_degrees()
                };
                headings.push(h);
            }
            headings
                .windows(2)
                .map(|h| wrap_signed(h[1] - h[0]))
                .collect()
        }
        HeadingMode::Axis => points
            .windows(2)
            .skip(1)
            .map(|w| signed_axis_diff(w[1].delta, w[0].delta))
            .collect(),
    };
    Ok((distances, turns))
}

/// Counts over bins `[k·w, (k+1)·w)` for consecutive `k` from `first_bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub first_bin: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, i: usize) -> f64 {
        ((self.first_bin + i as i64) as f64 + 0.5) * self.bin_width
    }

    /// `(bin index k, count)` for every bin including empty ones.
    pub fn bins(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.first_bin + i as i64, c))
    }

    /// `(bin center, count)` pairs.
    pub fn points(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.center(i), c))
    }

    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite value {v} in histogram input"
        )));
    }
    let keys: Vec<i64> = values
        .iter()
        .map(|v| (v / bin_width).floor() as i64)
        .collect();
    let (Some(&lo), Some(&hi)) = (keys.iter().min(), keys.iter().max()) else {
        return Ok(Histogram {
            bin_width,
            first_bin: 0,
            counts: Vec::new(),
        });
    };
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for k in keys {
        counts[(k - lo) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        first_bin: lo,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    pub sigma: f64,
    pub amplitude: f64,
    /// The log-parabola fit was not usable; moments were used instead.
    pub degenerate: bool,
}

/// Fits `A·exp(-(x-μ)²/(2σ²))` to a histogram by weighted least squares on
/// `ln(count)`, weights equal to the counts. Histograms with fewer than
/// three occupied bins, or whose log-parabola opens upward, fall back to
/// the weighted moments with `sigma >= bin_width / 2` and the flag set.
pub fn fit_gaussian(hist: &Histogram) -> Result<GaussianFit> {
    if hist.total() == 0 {
        return Err(Error::InvalidArgument(
            "cannot fit an empty histogram".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = hist
        .points()
        .filter(|p| p.1 > 0)
        .map(|(x, c)| (x, c as f64))
        .collect();
    if pts.len() >= 3 {
        // Center x for conditioning.
        let n: f64 = pts.iter().map(|p| p.1).sum();
        let x0 = pts.iter().map(|p| p.0 * p.1).sum::<f64>() / n;
        let mut m = [[0.0f64; 3]; 3];
        let mut r = [0.0f64; 3];
        for &(x, c) in &pts {
            let u = x - x0;
            let basis = [1.0, u, u * u];
            let y = c.ln();
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += c * basis[i] * basis[j];
                }
                r[i] += c * basis[i] * y;
            }
        }
        if let Some([a, b, q]) = solve3(m, r) {
            if q < 0.0 {
                let var = -1.0 / (2.0 * q);
                let mu = b * var;
                let amp = (a + mu * mu / (2.0 * var)).exp();
                return Ok(GaussianFit {
                    mean: x0 + mu,
                    sigma: var.sqrt(),
                    amplitude: amp,
                    degenerate: false,
                });
            }
        }
    }
    let n = hist.total() as f64;
    let mean = hist.points().map(|(x, c)| x * c as f64).sum::<f64>() / n;
    let var = hist
        .points()
        .map(|(x, c)| (x - mean).powi(2) * c as f64)
        .sum::<f64>()
        / n;
    let peak = hist.counts.iter().copied().max().unwrap_or(0) as f64;
    Ok(GaussianFit {
        mean,
        sigma: var.sqrt().max(hist.bin_width / 2.0),
        amplitude: peak,
        degenerate: true,
    })
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-12 * m[0][0].abs().max(1.0).powi(3) {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = r[i];
        }
        *o = det(mk) / d;
    }
    Some(out)
}

/// Zero-mean two-component Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleGaussianFit {
    pub sigma1: f64,
    pub sigma2: f64,
    pub mix_weight1: f64,
    /// Mean log-likelihood per sample at the returned iterate.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const EM_MAX_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-6;

/// Fits `w·N(0,σ1²) + (1-w)·N(0,σ2²)` to raw values by EM started at
/// `(1, 7, 0.9)`. Needs at least six occupied unit bins. Stops when the
/// mean log-likelihood moves less than [`EM_TOLERANCE`] or after
/// [`EM_MAX_ITERATIONS`]; in the latter case `converged` is false and the
/// best iterate seen is returned.
pub fn fit_double_gaussian(values: &[f64]) -> Result<DoubleGaussianFit> {
    let occupied = histogram(values, 1.0)?.nonzero_bins();
    if occupied < 6 {
        return Err(Error::InvalidArgument(format!(
            "double Gaussian fit needs at least 6 occupied bins, got {occupied}"
        )));
    }
    let n = values.len() as f64;
    let floor = 1e-6;
    let (mut s1, mut s2, mut w) = (1.0f64, 7.0f64, 0.9f64);
    let mean_ll = |s1: f64, s2: f64, w: f64| {
        values
            .iter()
            .map(|&v| mixture_pdf(v, s1, s2, w).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n
    };
    let mut ll = mean_ll(s1, s2, w);
    let mut best = (ll, s1, s2, w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        let (mut r_sum, mut r_sq, mut q_sq) = (0.0, 0.0, 0.0);
        for &v in values {
            let p1 = w * normal_pdf(v, s1);
            let p2 = (1.0 - w) * normal_pdf(v, s2);
            let total = p1 + p2;
            let r = if total > 0.0 {
                p1 / total
            } else if v.abs() < (s1 + s2) / 2.0 {
                1.0
            } else {
                0.0
            };
            r_sum += r;
            r_sq += r * v * v;
            q_sq += (1.0 - r) * v * v;
        }
        w = (r_sum / n).clamp(floor, 1.0 - floor);
        s1 = if r_sum > 0.0 {
            (r_sq / r_sum).sqrt().max(floor)
        } else {
            s1
        };
        s2 = if n - r_sum > 0.0 {
            (q_sq / (n - r_sum)).sqrt().max(floor)
        } else {
            s2
        };
        let next = mean_ll(s1, s2, w);
        if next > best.0 {
            best = (next, s1, s2, w);
        }
        let step = (next - ll).abs();
        ll = next;
        if step < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    let (ll, mut s1, mut s2, mut w) = if converged { (ll, s1, s2, w) } else { best };
    if s1 > s2 {
        std::mem::swap(&mut s1, &mut s2);
        w = 1.0 - w;
    }
    Ok(DoubleGaussianFit {
        sigma1: s1,
        sigma2: s2,
        mix_weight1: w,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

fn normal_pdf(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn mixture_pdf(x: f64, s1: f64, s2: f64, w: f64) -> f64 {
    w * normal_pdf(x, s1) + (1.0 - w) * normal_pdf(x, s2)
}

/// Fraction of values with `|v| <= bound`.
pub fn percentile_within(values: &[f64], bound: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values".into()));
    }
    Ok(values.iter().filter(|v| v.abs() <= bound).count() as f64 / values.len() as f64)
}

/// Motion parameters estimated from distances and turning angles, plus the
/// histograms they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEstimate {
    pub params: MotionParams,
    pub distance_fit: GaussianFit,
    pub turn_fit: DoubleGaussianFit,
    pub distance_histogram: Histogram,
    pub turn_histogram: Histogram,
    /// Turns kept after trimming, used for the attenuation regression.
    pub turns_used: usize,
    /// Fraction of all turning angles within ±15°.
    pub within_15: f64,
}

/// Turns beyond this magnitude are treated as wall or collision events and
/// left out of the turning model.
pub const TURN_TRIM: f64 = 45.0;

/// Estimates σ_v from a Gaussian fit to the unit-bin distance histogram,
/// the attenuation d as the regression slope of θ_t on θ_{t-1}, and the
/// double Gaussian from the residuals `θ_t - d·θ_{t-1}`.
pub fn estimate_motion(distances: &[f64], turns: &[f64]) -> Result<MotionEstimate> {
    let distance_histogram = histogram(distances, 1.0)?;
    let distance_fit = fit_gaussian(&distance_histogram)?;
    let turn_histogram = histogram(turns, 1.0)?;
    let within_15 = percentile_within(turns, 15.0)?;

    let pairs: Vec<(f64, f64)> = turns
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| a.abs() <= TURN_TRIM && b.abs() <= TURN_TRIM)
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(
            "too few turning angles to estimate motion".into(),
        ));
    }
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let d = if sxx > 0.0 {
        (sxy / sxx).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let residuals: Vec<f64> = pairs.iter().map(|&(a, b)| b - d * a).collect();
    let turn_fit = fit_double_gaussian(&residuals)?;

    let params = MotionParams {
        sigma_v: distance_fit.sigma,
        sigma_theta1: turn_fit.sigma1,
        sigma_theta2: turn_fit.sigma2,
        mix_weight1: turn_fit.mix_weight1,
        attenuation_d: d,
        ..MotionParams::default()
    };
    Ok(MotionEstimate {
        params,
        distance_fit,
        turn_fit,
        distance_histogram,
        turn_histogram,
        turns_used: pairs.len(),
        within_15,
    })
}
