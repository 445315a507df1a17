//! Simulate one long single-fish run and estimate its motion parameters
//! back from the ground-truth positions.
//!
//! cargo run --release --example motion_stats -- [frames] [seed] [arena side]

use fishtrack::simulator::{simulate, SimConfig};
use fishtrack::stats::{estimate_motion, trajectory_deltas, HeadingMode, TrackPoint};

fn main() -> fishtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_frames = args.next().and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let side = args.next().and_then(|a| a.parse().ok()).unwrap_or(100_000);
    let cfg = SimConfig {
        n_fish: 1,
        n_frames,
        width: side,
        height: side,
        render: false,
        seed,
        ..SimConfig::default()
    };
    let (_, gt) = simulate(cfg)?;
    let pts: Vec<TrackPoint> = gt
        .rows
        .iter()
        .map(|r| TrackPoint {
            x: r.x,
            y: r.y,
            delta: 0.0,
        })
        .collect();
    let (dist, turns) = trajectory_deltas(&pts, HeadingMode::Displacement)?;
    let est = estimate_motion(&dist, &turns)?;
    let (g, p) = (&cfg.motion, &est.params);
    println!("{:<14}{:>10}{:>10}", "", "generated", "estimated");
    println!("{:<14}{:>10.3}{:>10.3}", "sigma_v", g.sigma_v, p.sigma_v);
    println!(
        "{:<14}{:>10.3}{:>10.3}",
        "sigma_theta1", g.sigma_theta1, p.sigma_theta1
    );
    println!(
        "{:<14}{:>10.3}{:>10.3}",
        "sigma_theta2", g.sigma_theta2, p.sigma_theta2
    );
    println!(
        "{:<14}{:>10.3}{:>10.3}",
        "mix_weight1", g.mix_weight1, p.mix_weight1
    );
    println!(
        "{:<14}{:>10.3}{:>10.3}",
        "attenuation_d", g.attenuation_d, p.attenuation_d
    );
    println!("turns within 15 deg: {:.4}", est.within_15);
    Ok(())
}
