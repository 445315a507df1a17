//! Five fish for 1000 frames with induced crossings: track, score against
//! ground truth, then re-run with corrections until every frame is right.
//!
//! cargo run --release --example five_fish -- [seed] [crossing bias]

use fishtrack::eval::{corrections, evaluate, unlogged_swaps, EvalConfig, MappingMode};
use fishtrack::simulator::{simulate, SimConfig};
use fishtrack::tracker::{track_sequence, FrameOutput, Pin, Seeding, TrackerConfig, TrajectoryRow};

fn rows(out: &[FrameOutput]) -> Vec<TrajectoryRow> {
    out.iter().flat_map(|o| o.rows.iter().cloned()).collect()
}

fn main() -> fishtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let bias: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.05);
    let sim = SimConfig {
        n_fish: 5,
        n_frames: 1000,
        crossing_bias: bias,
        seed,
        ..SimConfig::default()
    };
    let (masks, gt) = simulate(sim)?;
    let merged = gt.rows.iter().filter(|r| !r.merged_with.is_empty()).count();
    println!(
        "{} frames, {merged} fish-frames inside merged blobs",
        masks.len()
    );

    let cfg = TrackerConfig {
        seed,
        ..TrackerConfig::default()
    };
    let eval_cfg = EvalConfig::default();
    let run = |pins: &[Pin]| {
        track_sequence(
            cfg,
            masks.iter().cloned().map(Ok),
            &Seeding::Blobs(None),
            pins,
            None,
        )
    };

    let out = run(&[])?;
    let report = evaluate(&rows(&out), &gt, &eval_cfg)?;
    let events: Vec<_> = out.iter().flat_map(|o| o.events.iter().cloned()).collect();
    let errors: Vec<_> = out.iter().flat_map(|o| o.errors.iter().cloned()).collect();
    print!("{}", report.to_text());
    println!(
        "{} linking events, {} error records, {} swaps not covered by either",
        events.len(),
        errors.len(),
        unlogged_swaps(&report.swaps, &events, &errors, eval_cfg.swap_window).len()
    );

    let mut pins: Vec<Pin> = Vec::new();
    let mut report = report;
    let mut traj = rows(&out);
    for round in 1..=10 {
        if report.correct_frame_fraction >= 1.0 {
            break;
        }
        // Pin against the identities the targets started with, so pins
        // from different rounds never disagree.
        let first = EvalConfig {
            mode: MappingMode::FirstFrame,
            ..eval_cfg
        };
        let by_start = evaluate(&traj, &gt, &first)?;
        pins.extend(corrections(&traj, &gt, &by_start, eval_cfg.match_radius)?);
        pins.sort_by_key(|p| (p.frame, p.target_id));
        pins.dedup_by_key(|p| (p.frame, p.target_id));
        traj = rows(&run(&pins)?);
        report = evaluate(&traj, &gt, &eval_cfg)?;
        println!(
            "correction round {round}: {} pins, correct frames {:.4}",
            pins.len(),
            report.correct_frame_fraction
        );
    }
    Ok(())
}
