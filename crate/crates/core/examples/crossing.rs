//! Two fish crossing at angles from 30 to 150 degrees, tracked with the
//! appearance-scored linking and with the position-only baseline.
//!
//! cargo run --release --example crossing -- [runs] [speed]

use fishtrack::linking::LinkingConfig;
use fishtrack::simulator::{scenario_crossing, GroundTruth};
use fishtrack::tracker::{track_sequence, FrameOutput, Seeding, TrackerConfig};

fn nearest_fish(gt: &GroundTruth, frame: u64, x: f64, y: f64) -> usize {
    gt.frame(frame)
        .min_by(|a, b| {
            (a.x - x)
                .hypot(a.y - y)
                .total_cmp(&(b.x - x).hypot(b.y - y))
        })
        .map(|r| r.fish_id)
        .unwrap()
}

/// Every target ends on the fish it started on.
fn identities_kept(out: &[FrameOutput], gt: &GroundTruth) -> bool {
    let (first, last) = (&out[0], &out[out.len() - 1]);
    first.rows.iter().zip(&last.rows).all(|(a, b)| {
        nearest_fish(gt, first.frame, a.x, a.y) == nearest_fish(gt, last.frame, b.x, b.y)
    })
}

fn main() -> fishtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let runs: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let speed: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5.0);
    let (mut scored, mut baseline) = (0, 0);
    for seed in 0..runs {
        let angle = 30.0 + 120.0 * seed as f64 / (runs.max(2) - 1) as f64;
        let (masks, gt) = scenario_crossing(angle, speed, seed)?;
        for appearance in [true, false] {
            let cfg = TrackerConfig {
                linking: LinkingConfig {
                    appearance,
                    ..LinkingConfig::default()
                },
                seed,
                ..TrackerConfig::default()
            };
            let frames = masks.iter().cloned().map(Ok);
            let out = track_sequence(cfg, frames, &Seeding::Blobs(None), &[], Some(1))?;
            if identities_kept(&out, &gt) {
                if appearance {
                    scored += 1;
                } else {
                    baseline += 1;
                }
            }
        }
    }
    println!("identities kept over {runs} crossings at {speed} px/frame:");
    println!("  appearance-scored linking  {scored}");
    println!("  position-only baseline     {baseline}");
    Ok(())
}
