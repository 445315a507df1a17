use proptest::prelude::*;

use fishtrack::appearance::{overlap_counts, weigh_ellipse};
use fishtrack::detection::fit_ellipse_pca;
use fishtrack::filter::systematic_resample;
use fishtrack::frames::{write_packed, FrameSource};
use fishtrack::linking::{hypothesis_count, score_hypotheses};
use fishtrack::mask::FrameMask;
use fishtrack::motion::{predict_distance, update_distance_state};
use fishtrack::records;
use fishtrack::stats::histogram;
use fishtrack::tracker::TrajectoryRow;
use fishtrack::types::{angle_diff, normalize_angle, normalize_weights, DistanceState, Ellipse};

fn ellipse() -> impl Strategy<Value = Ellipse> {
    (
        -10.0..60.0f64,
        -10.0..60.0f64,
        0.6..25.0f64,
        0.6..12.0f64,
        0.0..180.0f64,
    )
        .prop_map(|(x, y, a, b, d)| Ellipse::new(x, y, a, b, d).unwrap())
}

fn mask() -> impl Strategy<Value = FrameMask> {
    prop::collection::vec(any::<bool>(), 50 * 50).prop_map(|bits| {
        let px = bits.into_iter().map(u8::from).collect();
        FrameMask::new(50, 50, 0, px).unwrap()
    })
}

fn pixel_set() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::btree_set((0u32..40, 0u32..40), 3..200).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn weight_is_a_coverage_fraction(e in ellipse(), m in mask()) {
        let w = weigh_ellipse(&e, &m);
        let (hits, area) = overlap_counts(&e, &m);
        prop_assert!(hits <= area);
        prop_assert!((0.0..=1.0).contains(&w));
        if area > 0 {
            prop_assert_eq!(w, hits as f64 / area as f64);
        }
    }

    #[test]
    fn weight_of_full_and_empty_masks(e in ellipse()) {
        let full = FrameMask::new(50, 50, 0, vec![1; 2500]).unwrap();
        let empty = FrameMask::empty(50, 50, 0);
        let (hits, area) = overlap_counts(&e, &full);
        prop_assert_eq!(weigh_ellipse(&e, &empty), 0.0);
        let inside = e.cx - e.a >= 0.0 && e.cy - e.a >= 0.0 && e.cx + e.a <= 50.0 && e.cy + e.a <= 50.0;
        if inside {
            prop_assert_eq!(hits, area);
        }
    }

    #[test]
    fn pca_shape_ignores_translation(px in pixel_set(), dx in 0u32..5000, dy in 0u32..5000) {
        let e = fit_ellipse_pca(&px).unwrap();
        let moved: Vec<_> = px.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let m = fit_ellipse_pca(&moved).unwrap();
        prop_assert_eq!((m.a, m.b, m.delta), (e.a, e.b, e.delta));
        prop_assert!((m.cx - e.cx - dx as f64).abs() <= 1e-9 * (1.0 + m.cx));
    }

    #[test]
    fn pca_turns_with_a_quarter_rotation(px in pixel_set()) {
        let e = fit_ellipse_pca(&px).unwrap();
        prop_assume!(e.a - e.b > 0.05);
        // (x, y) -> (39 - y, x) turns the set by +90 degrees in image axes.
        let turned: Vec<_> = px.iter().map(|&(x, y)| (39 - y, x)).collect();
        let t = fit_ellipse_pca(&turned).unwrap();
        prop_assert!((t.a - e.a).abs() < 1e-9 && (t.b - e.b).abs() < 1e-9);
        prop_assert!(angle_diff(t.delta, e.delta + 90.0) < 1e-6);
    }

    #[test]
    fn systematic_counts_track_weights(raw in prop::collection::vec(0.0..1.0f64, 1..300), u in 0.0..1.0f64) {
        let mut w = raw.clone();
        prop_assume!(normalize_weights(&mut w));
        let n = w.len();
        let idx = systematic_resample(&w, u / n as f64);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        let mut counts = vec![0usize; n];
        idx.iter().for_each(|&i| counts[i] += 1);
        for (c, wi) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - n as f64 * wi).abs() < 1.0 + 1e-6);
        }
    }

    #[test]
    fn normalized_weights_sum_to_one(raw in prop::collection::vec(0.0..10.0f64, 1..100)) {
        let mut w = raw.clone();
        if normalize_weights(&mut w) {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(raw.iter().all(|&x| x == 0.0));
            prop_assert_eq!(w, raw);
        }
    }

    #[test]
    fn hypotheses_respect_capacities(
        n in 1usize..6,
        extra in prop::collection::vec(0usize..3, 1..4),
        seed in prop::collection::vec(0.0..10.0f64, 36),
    ) {
        // Capacities summing to n over k <= n blobs.
        let k = extra.len().min(n);
        let mut caps = vec![1usize; k];
        let mut left = n - k;
        for (j, e) in extra.iter().enumerate().take(k) {
            let add = (*e).min(left);
            caps[j] += add;
            left -= add;
        }
        caps[0] += left;
        let targets: Vec<usize> = (0..n).collect();
        let blobs: Vec<usize> = (0..k).map(|j| 3 * j + 1).collect();
        let scores: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|j| seed[i * 6 + j]).collect()).collect();
        let hyps = score_hypotheses(&targets, &blobs, &caps, &scores);
        prop_assert_eq!(hyps.len() as u128, hypothesis_count(n, &caps));
        prop_assert!(hyps.windows(2).all(|p| p[0].score >= p[1].score));
        for h in &hyps {
            prop_assert_eq!(h.assignment.len(), n);
            for (j, b) in blobs.iter().enumerate() {
                let used = h.assignment.iter().filter(|(_, bb)| bb == b).count();
                prop_assert_eq!(used, caps[j]);
            }
        }
    }

    #[test]
    fn distance_predictor_is_exact_on_lines(a in 0.0..40.0f64, b in -3.0..3.0f64) {
        // Distances cannot go negative, and the prediction is clamped at 0.
        prop_assume!(a + 4.0 * b >= 0.0);
        let mut ds = DistanceState::default();
        for t in 0..4 {
            ds = update_distance_state(&ds, a + b * t as f64);
        }
        prop_assert!((predict_distance(&ds) - (a + 4.0 * b)).abs() < 1e-9);
    }

    #[test]
    fn angles_normalize(raw in -1e5..1e5f64, other in -1e5..1e5f64) {
        let d = normalize_angle(raw).unwrap();
        prop_assert!((0.0..180.0).contains(&d));
        let diff = angle_diff(raw, other);
        prop_assert!((0.0..=90.0).contains(&diff));
        prop_assert_eq!(diff, angle_diff(other, raw));
    }

    #[test]
    fn histogram_keeps_every_value(values in prop::collection::vec(-100.0..100.0f64, 1..400), w in 0.1..10.0f64) {
        let h = histogram(&values, w).unwrap();
        prop_assert_eq!(h.total(), values.len() as u64);
        for v in &values {
            let k = (v / w).floor() as i64;
            let i = (k - h.first_bin) as usize;
            prop_assert!(h.counts[i] > 0);
        }
    }

    #[test]
    fn trajectory_csv_round_trips(xs in prop::collection::vec((0.0..640.0f64, 0.0..480.0f64, 0.0..180.0f64, 0.0..1.0f64, any::<bool>()), 1..30)) {
        let rows: Vec<TrajectoryRow> = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, y, d, w, flag))| TrajectoryRow {
                frame: i as u64 / 2,
                target_id: i % 2,
                x,
                y,
                a: 15.0,
                b: 4.0,
                delta: d,
                weight_max: w,
                interacting: flag,
                lost: !flag,
            })
            .collect();
        let mut first = Vec::new();
        records::write_trajectories(&mut first, &rows).unwrap();
        let back = records::read_trajectories(&first[..], "mem").unwrap();
        prop_assert_eq!(back.len(), rows.len());
        let mut second = Vec::new();
        records::write_trajectories(&mut second, &back).unwrap();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn packed_masks_round_trip() {
    let masks: Vec<FrameMask> = (0..5u64)
        .map(|f| {
            let mut m = FrameMask::empty(13, 7, f);
            for i in 0..(13 * 7) {
                if (i * 7 + f as u32).is_multiple_of(3) {
                    m.set(i % 13, i / 13, true);
                }
            }
            m
        })
        .collect();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.fmsk");
    let mut buf = Vec::new();
    write_packed(&mut buf, &masks).unwrap();
    std::fs::write(&path, buf).unwrap();
    let src = FrameSource::open(&path).unwrap();
    assert_eq!(src.len().unwrap(), 5);
    let back: Vec<FrameMask> = src.frames().unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(back, masks);
}
