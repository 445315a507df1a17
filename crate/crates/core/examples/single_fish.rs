//! Track one simulated fish and report the position error per 100 frames.
//!
//! cargo run --release --example single_fish -- [seed] [frames]

use fishtrack::simulator::{simulate, SimConfig};
use fishtrack::tracker::{track_sequence, Seeding, TrackerConfig};

fn main() -> fishtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let n_frames = args.next().and_then(|a| a.parse().ok()).unwrap_or(500);
    let (masks, gt) = simulate(SimConfig {
        n_fish: 1,
        n_frames,
        seed,
        ..SimConfig::default()
    })?;
    let cfg = TrackerConfig {
        seed,
        ..TrackerConfig::default()
    };
    let out = track_sequence(
        cfg,
        masks.into_iter().map(Ok),
        &Seeding::Blobs(None),
        &[],
        None,
    )?;
    let errors: Vec<f64> = out
        .iter()
        .map(|o| {
            let (r, g) = (&o.rows[0], gt.frame(o.frame).next().unwrap());
            (r.x - g.x).hypot(r.y - g.y)
        })
        .collect();
    println!("frames     mean err  max err");
    for (i, chunk) in errors.chunks(100).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let max = chunk.iter().cloned().fold(0.0, f64::max);
        println!(
            "{:>4}-{:<4} {:>8.2} {:>8.2}",
            i * 100,
            i * 100 + chunk.len() - 1,
            mean,
            max
        );
    }
    let lost = out.iter().filter(|o| o.rows[0].lost).count();
    println!(
        "overall mean {:.2} px, {lost} lost frames",
        errors.iter().sum::<f64>() / errors.len() as f64
    );
    Ok(())
}
