//! Every way three targets can be linked to blobs after a split, with the
//! summed particle weights each hypothesis collects.
//!
//! cargo run --example link_hypotheses

use fishtrack::linking::{allocate_capacities, commit_linking, score_hypotheses};

fn main() {
    let targets = [0, 1, 2];
    // Summed raw weights of each target's particles on each blob.
    let pair_scores = vec![
        vec![140.2, 12.5, 3.1],
        vec![20.7, 96.4, 44.0],
        vec![2.2, 51.8, 88.9],
    ];

    println!("three blobs:");
    let blobs = [4, 5, 6];
    let hyps = score_hypotheses(&targets, &blobs, &[1, 1, 1], &pair_scores);
    for h in &hyps {
        println!("  {:?}  {:.1}", h.assignment, h.score);
    }
    let best = commit_linking(&hyps, &[]).unwrap();
    println!("  chosen {:?}", best.assignment);

    // Two blobs, one twice the size of a single fish.
    let areas = [410, 205];
    let caps = allocate_capacities(3, &areas, 200.0);
    let two: Vec<Vec<f64>> = pair_scores
        .iter()
        .map(|r| vec![r[0] + r[1], r[2]])
        .collect();
    println!("two blobs (areas {areas:?}, capacities {caps:?}):");
    for h in score_hypotheses(&targets, &[4, 5], &caps, &two) {
        println!("  {:?}  {:.1}", h.assignment, h.score);
    }
}
