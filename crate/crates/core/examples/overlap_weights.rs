//! Particle weights as the ellipse slides across a fish: the fraction of
//! the ellipse covered by foreground drops as it moves off the body or
//! turns away from the body axis.
//!
//! cargo run --example overlap_weights

use fishtrack::appearance::weigh_ellipse;
use fishtrack::detection::detect;
use fishtrack::simulator::{render, FishPose, SimConfig};
use fishtrack::types::Ellipse;

fn main() -> fishtrack::Result<()> {
    let cfg = SimConfig {
        n_fish: 1,
        width: 120,
        height: 80,
        ..SimConfig::default()
    };
    let pose = FishPose {
        x: 60.0,
        y: 40.0,
        heading: 20.0,
        bend_side: 0,
    };
    let (mask, _) = render(&cfg, &[pose], 0);
    let o = &detect(&mask, 20)?.observations[0];
    let fit = o.ellipse;
    println!(
        "fitted ellipse a={:.2} b={:.2} delta={:.1}",
        fit.a, fit.b, fit.delta
    );
    println!("shift along axis (px)   weight");
    for s in [0.0, 2.0, 4.0, 8.0, 12.0, 16.0] {
        let (dy, dx) = fit.delta.to_radians().sin_cos();
        let e = fit.moved_to(fit.cx + s * dx, fit.cy + s * dy);
        println!("{s:>21.0}   {:.3}", weigh_ellipse(&e, &mask));
    }
    println!("rotation (deg)          weight");
    for r in [0.0, 5.0, 10.0, 20.0, 45.0, 90.0] {
        let e = Ellipse::new(fit.cx, fit.cy, fit.a, fit.b, fit.delta + r)?;
        println!("{r:>21.0}   {:.3}", weigh_ellipse(&e, &mask));
    }
    Ok(())
}
