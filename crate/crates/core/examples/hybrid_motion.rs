//! A fish that bursts forward and then turns hard, followed by one particle
//! filter with the hybrid motion model and one with constant velocity.
//!
//! cargo run --release --example hybrid_motion -- [seeds] [burst jerk] [first turn] [ramp frames]

use fishtrack::detection::detect;
use fishtrack::filter::{target_rng, ParticleFilter, StepParams};
use fishtrack::simulator::{scenario_script, SprintScript};
use fishtrack::types::TargetState;
use fishtrack::MotionParams;

fn max_error(
    script: &SprintScript,
    seed: u64,
    motion: MotionParams,
) -> fishtrack::Result<(f64, usize)> {
    let (masks, gt) = scenario_script(script, seed)?;
    let params = StepParams {
        motion,
        ..StepParams::default()
    };
    let det = detect(&masks[0], params.filter.min_blob_area)?;
    let state = TargetState::from_observation(0, &det.observations[0]);
    let mut pf = ParticleFilter::new(state, params.filter.n_particles, target_rng(seed, 0));
    let (mut worst, mut at) = (0.0, 0);
    for (k, m) in masks.iter().enumerate().skip(1) {
        let det = detect(m, params.filter.min_blob_area)?;
        let r = pf.step(m, det.observations.first(), &params)?;
        let g = &gt.rows[k];
        let e = (r.x - g.x).hypot(r.y - g.y);
        if e > worst {
            worst = e;
            at = k;
        }
    }
    Ok((worst, at))
}

fn main() -> fishtrack::Result<()> {
    let arg = |i: usize| std::env::args().nth(i).and_then(|a| a.parse::<f64>().ok());
    let seeds = arg(1).unwrap_or(10.0) as u64;
    let mut script = SprintScript::default();
    script.burst_jerk = arg(2).unwrap_or(script.burst_jerk);
    script.turn_start = arg(3).unwrap_or(script.turn_start);
    script.burst_frames = arg(4).map_or(script.burst_frames, |v| v as u64);
    let hybrid = MotionParams::default();
    println!("seed  hybrid max err (frame)  constant-velocity max err (frame)");
    for seed in 0..seeds {
        let (h, hf) = max_error(&script, seed, hybrid)?;
        let (c, cf) = max_error(&script, seed, hybrid.constant_velocity())?;
        println!("{seed:>4}  {h:>14.1} ({hf:>3})  {c:>25.1} ({cf:>3})");
    }
    Ok(())
}
