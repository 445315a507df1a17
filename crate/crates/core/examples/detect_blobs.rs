//! Render one frame of a simulated school and list the blobs with their
//! fitted ellipses.
//!
//! cargo run --example detect_blobs -- [seed]

use fishtrack::detection::detect;
use fishtrack::simulator::{SimConfig, Simulation};

fn main() -> fishtrack::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(0);
    let mut sim = Simulation::new(SimConfig {
        seed,
        ..SimConfig::default()
    })?;
    let (mask, gt) = sim.next_frame();
    let mask = mask.expect("rendering is on");
    let det = detect(&mask, 20)?;
    println!("{} fish, {} blobs", gt.len(), det.observations.len());
    println!("blob  pixels        x        y      a      b  delta");
    for o in &det.observations {
        let e = &o.ellipse;
        println!(
            "{:>4} {:>7} {:>8.2} {:>8.2} {:>6.2} {:>6.2} {:>6.1}",
            o.blob_id, o.pixel_count, o.x, o.y, e.a, e.b, e.delta
        );
    }
    for r in &gt {
        println!(
            "fish {} at ({:.2}, {:.2}) heading {:.1}",
            r.fish_id, r.x, r.y, r.heading
        );
    }
    Ok(())
}
