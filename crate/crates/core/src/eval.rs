//! Scores tracker output against simulator ground truth.

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::GroundTruth;
use crate::tracker::{ErrorRecord, EventRecord, Pin, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    /// Match targets to fish on the first frame.
    FirstFrame,
    /// Match targets to fish minimizing the error summed over all frames.
    #[default]
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// A target is on its fish when within this many pixels.
    pub match_radius: f64,
    pub mode: MappingMode,
    /// Frames around a swap in which a logged event or error covers it.
    pub swap_window: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_radius: 15.0,
            mode: MappingMode::Global,
            swap_window: 30,
        }
    }
}

/// A target whose unambiguous nearest fish changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Swap {
    /// First frame on the new fish.
    pub frame: u64,
    /// Last unambiguous frame on the old fish.
    pub since: u64,
    pub target_id: usize,
    pub from_fish: usize,
    pub to_fish: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub targets: usize,
    /// `(target_id, fish_id)` pairs used to score errors.
    pub mapping: Vec<(usize, usize)>,
    pub mean_error: f64,
    pub p95_error: f64,
    /// Frames where every target is within `match_radius` of its fish.
    pub correct_frame_fraction: f64,
    /// Target-frames within `match_radius` of their fish.
    pub correct_target_fraction: f64,
    pub swaps: Vec<Swap>,
}

impl EvalReport {
    pub fn swap_count(&self) -> usize {
        self.swaps.len()
    }

    /// Key-value text report.
    pub fn to_text(&self) -> String {
        let mapping: Vec<String> = self
            .mapping
            .iter()
            .map(|(t, f)| format!("{t}:{f}"))
            .collect();
        format!(
            "frames = {}\ntargets = {}\nmapping = \"{}\"\nmean_error = {:.4}\np95_error = {:.4}\ncorrect_frame_fraction = {:.6}\ncorrect_target_fraction = {:.6}\nswap_count = {}\n",
            self.frames,
            self.targets,
            mapping.join(";"),
            self.mean_error,
            self.p95_error,
            self.correct_frame_fraction,
            self.correct_target_fraction,
            self.swaps.len()
        )
    }
}

struct Aligned<'a> {
    frames: Vec<u64>,
    /// Per frame, rows sorted by target id.
    rows: Vec<Vec<&'a TrajectoryRow>>,
    /// Per frame, fish positions indexed by fish id.
    fish: Vec<Vec<(f64, f64)>>,
}

fn align<'a>(
    traj: &'a [TrajectoryRow],
    gt: &GroundTruth,
) -> Result<(Aligned<'a>, Vec<usize>, usize)> {
    let mut frames: Vec<u64> = traj.iter().map(|r| r.frame).collect();
    frames.dedup();
    if frames.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut targets: Vec<usize> = traj.iter().map(|r| r.target_id).collect();
    targets.sort_unstable();
    targets.dedup();
    let n_fish = gt.rows.iter().map(|r| r.fish_id + 1).max().unwrap_or(0);
    let gt_frames = gt.n_frames();
    let mut fish = vec![vec![(f64::NAN, f64::NAN); n_fish]; gt_frames as usize];
    for r in &gt.rows {
        fish[r.frame as usize][r.fish_id] = (r.x, r.y);
    }
    let mut rows: Vec<Vec<&TrajectoryRow>> = Vec::with_capacity(frames.len());
    let mut fish_out = Vec::with_capacity(frames.len());
    let mut i = 0;
    for &f in &frames {
        if f >= gt_frames {
            return Err(Error::InvalidArgument(format!(
                "trajectory frame {f} beyond ground truth ({gt_frames} frames)"
            )));
        }
        let mut at: Vec<&TrajectoryRow> = Vec::new();
        while i < traj.len() && traj[i].frame == f {
            at.push(&traj[i]);
            i += 1;
        }
        at.sort_by_key(|r| r.target_id);
        if at.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "frame {f} lacks some targets"
            )));
        }
        rows.push(at);
        fish_out.push(fish[f as usize].clone());
    }
    if i != traj.len() {
        return Err(Error::InvalidArgument(
            "trajectory rows are not ordered by frame".into(),
        ));
    }
    if targets.len() > n_fish {
        return Err(Error::InvalidArgument(format!(
            "{} targets but only {n_fish} fish in ground truth",
            targets.len()
        )));
    }
    Ok((
        Aligned {
            frames,
            rows,
            fish: fish_out,
        },
        targets,
        n_fish,
    ))
}

fn dist(a: (f64, f64), x: f64, y: f64) -> f64 {
    (a.0 - x).hypot(a.1 - y)
}

/// Joins a trajectory with ground truth and computes the report.
pub fn evaluate(traj: &[TrajectoryRow], gt: &GroundTruth, cfg: &EvalConfig) -> Result<EvalReport> {
    let (al, targets, n_fish) = align(traj, gt)?;
    let nt = targets.len();
    // Costs in thousandths of a pixel so the assignment runs on integers.
    let mut cost = Matrix::new(nt, n_fish, 0i64);
    let span = match cfg.mode {
        MappingMode::FirstFrame => 0..1,
        MappingMode::Global => 0..al.frames.len(),
    };
    for k in span {
        for (ti, r) in al.rows[k].iter().enumerate() {
            for (fi, &p) in al.fish[k].iter().enumerate() {
                cost[(ti, fi)] += (dist(p, r.x, r.y) * 1000.0).round() as i64;
            }
        }
    }
    let (_, assign) = kuhn_munkres_min(&cost);
    let mapping: Vec<(usize, usize)> = targets
        .iter()
        .copied()
        .zip(assign.iter().copied())
        .collect();

    let mut errors = Vec::with_capacity(traj.len());
    let mut good_frames = 0usize;
    let mut good_rows = 0usize;
    for k in 0..al.frames.len() {
        let mut all = true;
        for (ti, r) in al.rows[k].iter().enumerate() {
            let e = dist(al.fish[k][assign[ti]], r.x, r.y);
            errors.push(e);
            if e <= cfg.match_radius {
                good_rows += 1;
            } else {
                all = false;
            }
        }
        good_frames += all as usize;
    }
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let p95_error = sorted[rank - 1];

    Ok(EvalReport {
        frames: al.frames.len(),
        targets: nt,
        mapping,
        mean_error,
        p95_error,
        correct_frame_fraction: good_frames as f64 / al.frames.len() as f64,
        correct_target_fraction: good_rows as f64 / errors.len() as f64,
        swaps: find_swaps(&al, cfg.match_radius),
    })
}

/// Identity changes between frames where a target sits unambiguously on a
/// single fish.
fn find_swaps(al: &Aligned, radius: f64) -> Vec<Swap> {
    let nt = al.rows.first().map_or(0, Vec::len);
    let mut swaps = Vec::new();
    for ti in 0..nt {
        let mut current: Option<(usize, u64)> = None;
        for k in 0..al.frames.len() {
            let r = al.rows[k][ti];
            let mut d: Vec<(f64, usize)> = al.fish[k]
                .iter()
                .enumerate()
                .map(|(f, &p)| (dist(p, r.x, r.y), f))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let unambiguous = d[0].0 <= radius && d.get(1).is_none_or(|s| s.0 > radius);
            if !unambiguous {
                continue;
            }
            let fish = d[0].1;
            let frame = al.frames[k];
            match current {
                Some((prev, since)) if prev != fish => swaps.push(Swap {
                    frame,
                    since,
                    target_id: r.target_id,
                    from_fish: prev,
                    to_fish: fish,
                }),
                _ => {}
            }
            current = Some((fish, frame));
        }
    }
    swaps.sort_by_key(|s| (s.frame, s.target_id));
    swaps
}

/// Swaps with no linking event or error record for the target within the
/// window around them.
pub fn unlogged_swaps<'a>(
    swaps: &'a [Swap],
    events: &[EventRecord],
    errors: &[ErrorRecord],
    window: u64,
) -> Vec<&'a Swap> {
    swaps
        .iter()
        .filter(|s| {
            let lo = s.since.saturating_sub(window);
            let hi = s.frame + window;
            let in_window = |f: u64| f >= lo && f <= hi;
            let event = events
                .iter()
                .any(|e| in_window(e.frame) && e.group_targets.contains(&s.target_id));
            let error = errors
                .iter()
                .any(|e| in_window(e.frame) && e.target_id == s.target_id);
            !(event || error)
        })
        .collect()
}

/// Pins every target back onto its mapped fish at the first frame of each
/// run of frames where it is off that fish.
pub fn corrections(
    traj: &[TrajectoryRow],
    gt: &GroundTruth,
    report: &EvalReport,
    radius: f64,
) -> Result<Vec<Pin>> {
    let (al, _, _) = align(traj, gt)?;
    let mut pins = Vec::new();
    for (ti, &(target, fish)) in report.mapping.iter().enumerate() {
        let mut off = false;
        for k in 0..al.frames.len() {
            let r = al.rows[k][ti];
            let p = al.fish[k][fish];
            let bad = dist(p, r.x, r.y) > radius;
            if bad && !off {
                pins.push(Pin {
                    frame: al.frames[k],
                    target_id: target,
                    blob_id: None,
                    x: p.0,
                    y: p.1,
                });
            }
            off = bad;
        }
    }
    pins.sort_by_key(|a| (a.frame, a.target_id));
    Ok(pins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::GtRow;

    fn gt_lines() -> GroundTruth {
        let mut gt = GroundTruth::default();
        for f in 0..50u64 {
            for id in 0..3usize {
                gt.rows.push(GtRow {
                    frame: f,
                    fish_id: id,
                    x: 10.0 + 2.0 * f as f64,
                    y: 100.0 * id as f64 + 20.0,
                    heading: 0.0,
                    bent: false,
                    merged_with: vec![],
                });
            }
        }
        gt
    }

    fn as_traj(gt: &GroundTruth, perm: &[usize]) -> Vec<TrajectoryRow> {
        let mut out = Vec::new();
        for f in 0..gt.n_frames() {
            let fish: Vec<&GtRow> = gt.frame(f).collect();
            for (t, &p) in perm.iter().enumerate() {
                let g = fish[p];
                out.push(TrajectoryRow {
                    frame: f,
                    target_id: t,
                    x: g.x,
                    y: g.y,
                    a: 15.0,
                    b: 4.0,
                    delta: 0.0,
                    weight_max: 1.0,
                    interacting: false,
                    lost: false,
                });
            }
        }
        out
    }

    #[test]
    fn self_comparison_is_perfect() {
        let gt = gt_lines();
        let r = evaluate(&as_traj(&gt, &[0, 1, 2]), &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.mean_error, 0.0);
        assert_eq!(r.p95_error, 0.0);
        assert_eq!(r.swap_count(), 0);
        assert_eq!(r.correct_frame_fraction, 1.0);
    }

    #[test]
    fn global_permutation_is_not_a_swap() {
        let gt = gt_lines();
        let r = evaluate(&as_traj(&gt, &[2, 0, 1]), &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.mapping, vec![(0, 2), (1, 0), (2, 1)]);
        assert_eq!(r.swap_count(), 0);
        assert_eq!(r.mean_error, 0.0);
    }

    #[test]
    fn mid_run_swap_is_counted_and_corrected() {
        let gt = gt_lines();
        let mut traj = as_traj(&gt, &[0, 1, 2]);
        for r in traj.iter_mut().filter(|r| r.frame >= 30 && r.target_id < 2) {
            let other = 1 - r.target_id;
            r.y = 100.0 * other as f64 + 20.0;
        }
        let cfg = EvalConfig {
            mode: MappingMode::FirstFrame,
            ..Default::default()
        };
        let r = evaluate(&traj, &gt, &cfg).unwrap();
        assert_eq!(r.swap_count(), 2);
        assert!((r.correct_frame_fraction - 30.0 / 50.0).abs() < 1e-12);
        assert_eq!(unlogged_swaps(&r.swaps, &[], &[], 30).len(), 2);
        let ev = EventRecord {
            frame: 29,
            group_targets: vec![0, 1],
            blob_ids: vec![0, 1],
            chosen: vec![(0, 1), (1, 0)],
            all_scores: vec![1.0, 0.5],
            fallback: false,
        };
        assert!(unlogged_swaps(&r.swaps, &[ev], &[], 30).is_empty());
        let pins = corrections(&traj, &gt, &r, cfg.match_radius).unwrap();
        assert_eq!(pins.len(), 2);
        assert!(pins.iter().all(|p| p.frame == 30));
    }

    #[test]
    fn frames_beyond_ground_truth_abort() {
        let gt = gt_lines();
        let mut traj = as_traj(&gt, &[0, 1, 2]);
        for r in &mut traj {
            r.frame += 10;
        }
        assert!(evaluate(&traj, &gt, &EvalConfig::default()).is_err());
    }
}
