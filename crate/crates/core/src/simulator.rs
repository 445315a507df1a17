//! Synthetic fish-school generator with ground truth.
//!
//! Fish swim with a mean-reverting speed and the attenuated double-Gaussian
//! turn process, reflect off the arena walls and are drawn as two-segment
//! capsules that bend toward the side they turn to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{FrameMask, LabelImage};
use crate::motion::{self, MotionParams};
use crate::types::{normalize_heading, wrap_signed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_fish: usize,
    pub width: u32,
    pub height: u32,
    pub n_frames: u64,
    /// Generation-side motion; taken from the `[motion]` section.
    #[serde(skip)]
    pub motion: MotionParams,
    /// Mean swimming distance per frame.
    pub cruise_speed: f64,
    /// Frame-to-frame correlation of the speed.
    pub speed_persistence: f64,
    pub body_length: f64,
    pub body_width: f64,
    /// Angle between the head and tail segments of a turning fish, degrees.
    pub bend_amplitude: f64,
    /// Smallest turn (degrees) that bends the body.
    pub bend_threshold: f64,
    /// Steering gain toward a randomly chosen peer; 0 swims independently.
    pub crossing_bias: f64,
    pub seed: u64,
    /// Draw masks. Off, only ground truth is produced.
    pub render: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_fish: 5,
            width: 640,
            height: 480,
            n_frames: 1000,
            motion: MotionParams::default(),
            cruise_speed: 12.0,
            speed_persistence: 0.9,
            body_length: 30.0,
            body_width: 8.0,
            bend_amplitude: 20.0,
            bend_threshold: 3.0,
            crossing_bias: 0.0,
            seed: 0,
            render: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fish == 0 {
            return Err(Error::Config("n_fish must be at least 1".into()));
        }
        if !(self.body_width > 0.0 && self.body_length > self.body_width) {
            return Err(Error::Config(
                "body_length must exceed body_width > 0".into(),
            ));
        }
        let margin = 2.0 * self.margin();
        if (self.width as f64) <= margin || (self.height as f64) <= margin {
            return Err(Error::Config("arena too small for the fish".into()));
        }
        if !(0.0..1.0).contains(&self.speed_persistence) {
            return Err(Error::Config("speed_persistence must lie in [0, 1)".into()));
        }
        if self.cruise_speed < 0.0 || self.crossing_bias < 0.0 {
            return Err(Error::Config(
                "cruise_speed and crossing_bias must be non-negative".into(),
            ));
        }
        let m = &self.motion;
        let sigmas = [m.sigma_v, m.sigma_theta1, m.sigma_theta2];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("motion std-devs must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&m.mix_weight1) || !(0.0..=1.0).contains(&m.attenuation_d) {
            return Err(Error::Config(
                "mix_weight1 and attenuation_d must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        self.body_length / 2.0 + 2.0
    }
}

/// One fish on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRow {
    pub frame: u64,
    pub fish_id: usize,
    pub x: f64,
    pub y: f64,
    /// Travel direction in `[0, 360)`.
    pub heading: f64,
    pub bent: bool,
    /// Other fish drawn into the same connected blob.
    pub merged_with: Vec<usize>,
}

/// Ground truth for a whole run, ordered by (frame, fish_id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rows: Vec<GtRow>,
}

impl GroundTruth {
    pub fn frame(&self, frame: u64) -> impl Iterator<Item = &GtRow> {
        self.rows.iter().filter(move |r| r.frame == frame)
    }

    pub fn fish(&self, fish_id: usize) -> impl Iterator<Item = &GtRow> {
        self.rows.iter().filter(move |r| r.fish_id == fish_id)
    }

    pub fn n_frames(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.frame + 1)
    }
}

/// Body pose used for drawing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FishPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// -1, 0 or +1: side the tail swings toward the turn.
    pub bend_side: i8,
}

/// Pixels of a two-segment capsule whose segment midpoints average to the
/// pose position. The tail segment points along
/// `heading + 180 + bend_side * bend_amplitude`.
pub fn fish_pixels(
    pose: &FishPose,
    length: f64,
    width: f64,
    bend: f64,
    size: (u32, u32),
) -> Vec<(u32, u32)> {
    let seg = (length - width) / 2.0;
    let r = width / 2.0;
    let dir = |deg: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        (c, s)
    };
    let head = dir(pose.heading);
    let tail = dir(pose.heading + 180.0 + pose.bend_side as f64 * bend);
    let hinge = (
        pose.x - seg / 4.0 * (head.0 + tail.0),
        pose.y - seg / 4.0 * (head.1 + tail.1),
    );
    let segments = [
        (hinge, (hinge.0 + seg * head.0, hinge.1 + seg * head.1)),
        (hinge, (hinge.0 + seg * tail.0, hinge.1 + seg * tail.1)),
    ];
    let reach = seg + r + 1.0;
    let lo_x = ((hinge.0 - reach).floor().max(0.0)) as u32;
    let lo_y = ((hinge.1 - reach).floor().max(0.0)) as u32;
    let hi_x = ((hinge.0 + reach).ceil().min(size.0 as f64 - 1.0)).max(0.0) as u32;
    let hi_y = ((hinge.1 + reach).ceil().min(size.1 as f64 - 1.0)).max(0.0) as u32;
    let mut out = Vec::new();
    for row in lo_y..=hi_y {
        for col in lo_x..=hi_x {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            if segments
                .iter()
                .any(|&(a, b)| segment_distance(p, a, b) <= r)
            {
                out.push((col, row));
            }
        }
    }
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

#[derive(Debug, Clone)]
struct Fish {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    turn: f64,
    bend_side: i8,
    /// Peer being approached and frames left.
    attraction: Option<(usize, u32)>,
    cooldown: u32,
    /// Side of a committed turn away from a wall, 0 when none.
    wall_turn: f64,
}

/// Streams frames of a simulated school one at a time.
pub struct Simulation {
    config: SimConfig,
    fish: Vec<Fish>,
    rng: ChaCha8Rng,
    frame: u64,
}

const ATTRACTION_FRAMES: u32 = 60;
const ATTRACTION_RATE: f64 = 0.02;
/// Extra turn per frame, degrees, while a wall is ahead.
const WALL_TURN: f64 = 15.0;

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let m = config.margin();
        let min_gap = 1.5 * config.body_length;
        let mut fish: Vec<Fish> = Vec::with_capacity(config.n_fish);
        let mut attempts = 0;
        while fish.len() < config.n_fish {
            attempts += 1;
            let x = rng.random_range(m..config.width as f64 - m);
            let y = rng.random_range(m..config.height as f64 - m);
            if attempts < 10_000 && fish.iter().any(|f| (f.x - x).hypot(f.y - y) < min_gap) {
                continue;
            }
            fish.push(Fish {
                x,
                y,
                heading: rng.random_range(0.0..360.0),
                speed: config.cruise_speed,
                turn: 0.0,
                bend_side: 0,
                attraction: None,
                cooldown: 0,
                wall_turn: 0.0,
            });
        }
        Ok(Simulation {
            config,
            fish,
            rng,
            frame: 0,
        })
    }

    /// Builds a simulation from explicit initial poses, with no noise source
    /// other than the configured motion parameters.
    pub fn with_poses(config: SimConfig, poses: &[(f64, f64, f64, f64)]) -> Result<Self> {
        let mut sim = Simulation::new(SimConfig {
            n_fish: poses.len().max(1),
            ..config
        })?;
        for (f, &(x, y, heading, speed)) in sim.fish.iter_mut().zip(poses) {
            f.x = x;
            f.y = y;
            f.heading = normalize_heading(heading);
            f.speed = speed;
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Produces the next frame: the first call returns the initial poses.
    pub fn next_frame(&mut self) -> (Option<FrameMask>, Vec<GtRow>) {
        if self.frame > 0 {
            for i in 0..self.fish.len() {
                self.advance(i);
            }
        }
        let frame = self.frame;
        self.frame += 1;
        let poses: Vec<FishPose> = self
            .fish
            .iter()
            .map(|f| FishPose {
                x: f.x,
                y: f.y,
                heading: f.heading,
                bend_side: f.bend_side,
            })
            .collect();
        let (mask, merged) = if self.config.render {
            let (m, g) = render(&self.config, &poses, frame);
            (Some(m), g)
        } else {
            (None, vec![vec![]; poses.len()])
        };
        let rows = self
            .fish
            .iter()
            .enumerate()
            .map(|(i, f)| GtRow {
                frame,
                fish_id: i,
                x: f.x,
                y: f.y,
                heading: f.heading,
                bent: f.bend_side != 0,
                merged_with: merged[i].clone(),
            })
            .collect();
        (mask, rows)
    }

    fn advance(&mut self, i: usize) {
        let cfg = self.config;
        let mp = cfg.motion;
        let rng = &mut self.rng;
        let rho = cfg.speed_persistence;
        let innovation = mp.sigma_v * (1.0 - rho * rho).sqrt();
        let prev_speed = self.fish[i].speed;
        let speed = loop {
            let z: f64 = rng.sample(StandardNormal);
            let s = cfg.cruise_speed + rho * (prev_speed - cfg.cruise_speed) + innovation * z;
            if s >= 0.0 {
                break s;
            }
        };
        let mut turn = motion::sample_turn(mp.attenuation_d * self.fish[i].turn, &mp, rng);

        // Attraction toward a peer, switched on at random.
        let mut steer = 0.0;
        if cfg.crossing_bias > 0.0 && self.fish.len() > 1 {
            let f = &self.fish[i];
            match f.attraction {
                Some((peer, left)) => {
                    let p = &self.fish[peer];
                    let (dx, dy) = (p.x - f.x, p.y - f.y);
                    let gap = dx.hypot(dy);
                    if left == 0 || gap < cfg.body_length {
                        self.fish[i].attraction = None;
                        self.fish[i].cooldown = ATTRACTION_FRAMES;
                    } else {
                        // Aim where the peer will be, so paths cross instead
                        // of one fish trailing the other.
                        let lead = (gap / f.speed.max(1.0)).min(ATTRACTION_FRAMES as f64);
                        let (s, c) = p.heading.to_radians().sin_cos();
                        let (dx, dy) = (dx + lead * p.speed * c, dy + lead * p.speed * s);
                        let bearing = dy.atan2(dx).to_degrees();
                        steer = cfg.crossing_bias * wrap_signed(bearing - f.heading);
                        self.fish[i].attraction = Some((peer, left - 1));
                    }
                }
                None if f.cooldown > 0 => self.fish[i].cooldown -= 1,
                None => {
                    if rng.random::<f64>() < ATTRACTION_RATE {
                        let mut peer = rng.random_range(0..self.fish.len() - 1);
                        if peer >= i {
                            peer += 1;
                        }
                        self.fish[i].attraction = Some((peer, ATTRACTION_FRAMES));
                    }
                }
            }
        }
        // Turn away from a wall coming up ahead; reflection below only
        // catches what this misses.
        {
            let f = &self.fish[i];
            let ahead = 5.0 * speed + cfg.body_length;
            let (s, c) = (f.heading + turn + steer).to_radians().sin_cos();
            let (ax, ay) = (f.x + ahead * c, f.y + ahead * s);
            let m = cfg.margin();
            let to_center = (cfg.height as f64 / 2.0 - f.y)
                .atan2(cfg.width as f64 / 2.0 - f.x)
                .to_degrees();
            let off = wrap_signed(to_center - f.heading);
            let mut side = f.wall_turn;
            if side == 0.0
                && (ax < m || ay < m || ax > cfg.width as f64 - m || ay > cfg.height as f64 - m)
            {
                side = if off == 0.0 { 1.0 } else { off.signum() };
            } else if off.abs() < 45.0 {
                side = 0.0;
            }
            // Once started, the turn goes on until the fish faces inward.
            steer += side * WALL_TURN;
            self.fish[i].wall_turn = side;
        }
        turn += steer;

        let f = &mut self.fish[i];
        let heading = normalize_heading(f.heading + turn);
        let (s, c) = heading.to_radians().sin_cos();
        let (mut x, mut y) = (f.x + speed * c, f.y + speed * s);
        let (mut hx, mut hy) = (c, s);
        let m = cfg.margin();
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        // Specular reflection off the walls.
        if x < m {
            x = 2.0 * m - x;
            hx = -hx;
        } else if x > w - m {
            x = 2.0 * (w - m) - x;
            hx = -hx;
        }
        if y < m {
            y = 2.0 * m - y;
            hy = -hy;
        } else if y > h - m {
            y = 2.0 * (h - m) - y;
            hy = -hy;
        }
        f.x = x.clamp(m, w - m);
        f.y = y.clamp(m, h - m);
        f.heading = normalize_heading(hy.atan2(hx).to_degrees());
        f.speed = speed;
        f.turn = turn - steer;
        f.bend_side = if turn.abs() > cfg.bend_threshold {
            turn.signum() as i8
        } else {
            0
        };
    }
}

/// Draws every fish and finds which fish share a connected blob.
pub fn render(cfg: &SimConfig, poses: &[FishPose], frame: u64) -> (FrameMask, Vec<Vec<usize>>) {
    let mut mask = FrameMask::empty(cfg.width, cfg.height, frame);
    let bodies: Vec<Vec<(u32, u32)>> = poses
        .iter()
        .map(|p| {
            fish_pixels(
                p,
                cfg.body_length,
                cfg.body_width,
                cfg.bend_amplitude,
                (cfg.width, cfg.height),
            )
        })
        .collect();
    for body in &bodies {
        for &(x, y) in body {
            mask.set(x, y, true);
        }
    }
    let components = crate::detection::label_components(&mask, 1);
    let labels = LabelImage::from_components(cfg.width, cfg.height, &components);
    let blob_of: Vec<Option<usize>> = bodies
        .iter()
        .map(|b| b.first().and_then(|&(x, y)| labels.blob_at(x, y)))
        .collect();
    let merged = (0..poses.len())
        .map(|i| {
            (0..poses.len())
                .filter(|&j| j != i && blob_of[i].is_some() && blob_of[i] == blob_of[j])
                .collect()
        })
        .collect();
    (mask, merged)
}

/// Runs a whole simulation in memory.
pub fn simulate(config: SimConfig) -> Result<(Vec<FrameMask>, GroundTruth)> {
    let mut sim = Simulation::new(config)?;
    let mut masks = Vec::new();
    let mut gt = GroundTruth::default();
    for _ in 0..config.n_frames {
        let (m, rows) = sim.next_frame();
        masks.extend(m);
        gt.rows.extend(rows);
    }
    Ok((masks, gt))
}

/// Two fish on straight converging paths that meet near the arena center
/// and separate again. The base direction, arrival offset and a small
/// lateral miss come from `seed`.
pub fn scenario_crossing(
    angle_between: f64,
    speed: f64,
    seed: u64,
) -> Result<(Vec<FrameMask>, GroundTruth)> {
    if !(angle_between > 10.0 && angle_between < 170.0) {
        return Err(Error::InvalidArgument(format!(
            "crossing angle {angle_between} outside (10, 170)"
        )));
    }
    if speed.is_nan() || speed <= 0.0 {
        return Err(Error::InvalidArgument(
            "crossing speed must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.random_range(0.0..360.0);
    let lag: f64 = rng.random_range(-1.0..1.0);
    let miss: f64 = rng.random_range(-2.0..2.0);
    let meet = 25.0;
    let n_frames = 2 * meet as u64 + 1;
    let reach = speed * (meet + 2.0) + 40.0;
    let side = (2.0 * reach).ceil() as u32;
    let cfg = SimConfig {
        n_fish: 2,
        width: side,
        height: side,
        n_frames,
        motion: MotionParams {
            sigma_v: 0.0,
            sigma_theta1: 0.0,
            sigma_theta2: 0.0,
            ..MotionParams::default()
        },
        cruise_speed: speed,
        speed_persistence: 0.0,
        crossing_bias: 0.0,
        seed,
        ..SimConfig::default()
    };
    let c = side as f64 / 2.0;
    let headings = [base, base + angle_between];
    let arrival = [meet, meet + lag];
    let normal = (base + 90.0).to_radians();
    let mut masks = Vec::new();
    let mut gt = GroundTruth::default();
    for t in 0..n_frames {
        let poses: Vec<FishPose> = (0..2)
            .map(|k| {
                let (s, co) = headings[k].to_radians().sin_cos();
                let along = speed * (t as f64 - arrival[k]);
                let off = if k == 0 { miss } else { 0.0 };
                FishPose {
                    x: c + along * co + off * normal.cos(),
                    y: c + along * s + off * normal.sin(),
                    heading: normalize_heading(headings[k]),
                    bend_side: 0,
                }
            })
            .collect();
        let (mask, merged) = render(&cfg, &poses, t);
        masks.push(mask);
        for (k, p) in poses.iter().enumerate() {
            gt.rows.push(GtRow {
                frame: t,
                fish_id: k,
                x: p.x,
                y: p.y,
                heading: p.heading,
                bent: false,
                merged_with: merged[k].clone(),
            });
        }
    }
    Ok((masks, gt))
}

/// Speed and turn profile of [`scenario_script`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprintScript {
    /// Straight frames at `cruise` speed before the turn.
    pub lead_in: u64,
    pub cruise: f64,
    /// Change of the acceleration per burst frame: it grows for
    /// `burst_frames` frames and then falls back to zero over as many.
    pub burst_jerk: f64,
    pub burst_frames: u64,
    /// First turn of the sharp turn, degrees; each following frame turns
    /// `turn_decay` times the previous one.
    pub turn_start: f64,
    pub turn_decay: f64,
    pub turn_frames: u64,
    /// Straight frames after the burst.
    pub tail_frames: u64,
}

impl Default for SprintScript {
    fn default() -> Self {
        SprintScript {
            lead_in: 10,
            cruise: 4.0,
            burst_jerk: 12.0,
            burst_frames: 3,
            turn_start: 60.0,
            turn_decay: 0.5,
            turn_frames: 6,
            tail_frames: 10,
        }
    }
}

/// One fish that cruises, turns sharply, bursts forward and goes on
/// straight. `seed` picks the start heading, the turn side and ±10% on the
/// jerk and the first turn.
pub fn scenario_sprint(seed: u64) -> Result<(Vec<FrameMask>, GroundTruth)> {
    scenario_script(&SprintScript::default(), seed)
}

pub fn scenario_script(script: &SprintScript, seed: u64) -> Result<(Vec<FrameMask>, GroundTruth)> {
    if script.cruise < 0.0 || script.burst_jerk < 0.0 || !(0.0..=1.0).contains(&script.turn_decay) {
        return Err(Error::InvalidArgument("bad sprint script".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heading: f64 = rng.random_range(0.0..360.0);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let jerk = script.burst_jerk * rng.random_range(0.9..1.1);
    let first_turn = side * script.turn_start * rng.random_range(0.9..1.1);

    let mut poses = vec![FishPose {
        x: 0.0,
        y: 0.0,
        heading: normalize_heading(heading),
        bend_side: 0,
    }];
    let mut speed = script.cruise;
    let mut accel = 0.0;
    let mut turn = first_turn;
    let turn_end = script.lead_in + script.turn_frames;
    let ramp_end = turn_end + script.burst_frames;
    let burst_end = ramp_end + script.burst_frames;
    let total = burst_end + script.tail_frames;
    for t in 0..total {
        let mut theta = 0.0;
        if t >= script.lead_in && t < turn_end {
            theta = turn;
            turn *= script.turn_decay;
        } else if t >= turn_end && t < burst_end {
            accel += if t < ramp_end { jerk } else { -jerk };
            speed += accel;
        }
        heading += theta;
        let last = poses[poses.len() - 1];
        let (s, c) = heading.to_radians().sin_cos();
        poses.push(FishPose {
            x: last.x + speed * c,
            y: last.y + speed * s,
            heading: normalize_heading(heading),
            bend_side: if theta.abs() > 3.0 {
                theta.signum() as i8
            } else {
                0
            },
        });
    }
    let cfg = SimConfig {
        n_fish: 1,
        ..SimConfig::default()
    };
    let pad = cfg.body_length + 10.0;
    let (lo_x, hi_x) = poses
        .iter()
        .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.x), a.1.max(p.x)));
    let (lo_y, hi_y) = poses
        .iter()
        .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.y), a.1.max(p.y)));
    let cfg = SimConfig {
        width: (hi_x - lo_x + 2.0 * pad).ceil() as u32,
        height: (hi_y - lo_y + 2.0 * pad).ceil() as u32,
        n_frames: poses.len() as u64,
        seed,
        ..cfg
    };
    let mut masks = Vec::with_capacity(poses.len());
    let mut gt = GroundTruth::default();
    for (t, p) in poses.iter().enumerate() {
        let pose = FishPose {
            x: p.x - lo_x + pad,
            y: p.y - lo_y + pad,
            ..*p
        };
        let (mask, _) = render(&cfg, &[pose], t as u64);
        masks.push(mask);
        gt.rows.push(GtRow {
            frame: t as u64,
            fish_id: 0,
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            bent: pose.bend_side != 0,
            merged_with: vec![],
        });
    }
    Ok((masks, gt))
}
