//! Joint trajectory linking for targets that shared a blob.
//!
//! While fish overlap they are tracked as an interaction group on the merged
//! blob. When the blob splits, every admissible assignment of the group's
//! targets onto the new blobs is enumerated and scored by the raw sum of the
//! targets' particle weights on the blobs they are assigned to; the best
//! assignment wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DistanceState, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkingConfig {
    /// Largest blob count for exhaustive enumeration; above it the greedy
    /// fallback is used.
    pub max_enumerable: usize,
    /// Score hypotheses by particle weights. When off every pair scores the
    /// same and the tie rule (nearest neighbor) decides alone.
    pub appearance: bool,
    /// Minimum coverage a single particle must reach on a blob for the
    /// target to count as touching it.
    pub touch_coverage: f64,
    /// Hypotheses scoring within this fraction of the best are treated as
    /// tied and decided by predicted motion.
    pub tie_margin: f64,
}

impl Default for LinkingConfig {
    fn default() -> Self {
        LinkingConfig {
            max_enumerable: 8,
            appearance: true,
            touch_coverage: 0.1,
            tie_margin: 0.05,
        }
    }
}

impl LinkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_enumerable == 0 {
            return Err(Error::Config("max_enumerable must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.touch_coverage) {
            return Err(Error::Config("touch_coverage must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.tie_margin) {
            return Err(Error::Config("tie_margin must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Targets currently sharing one merged blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGroup {
    pub target_ids: Vec<usize>,
    pub merged_blob_id: usize,
    pub start_frame: u64,
}

/// Motion state saved when a target enters an interaction, restored when it
/// is linked to a blob again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreCrossing {
    pub start_frame: u64,
    pub x: f64,
    pub y: f64,
    pub dist_state: DistanceState,
    pub heading: Option<f64>,
}

/// One assignment of targets to blobs with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkingHypothesis {
    /// `(target_id, blob_id)` pairs sorted by target id.
    pub assignment: Vec<(usize, usize)>,
    pub score: f64,
}

/// A set of targets linked through the blobs they claim or touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub target_ids: Vec<usize>,
    pub blob_ids: Vec<usize>,
}

/// Which blobs a target reaches this frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TargetClaim {
    pub target_id: usize,
    /// Nearest observation within the gating radius.
    pub nearest: Option<usize>,
    /// Blobs its predicted ellipses overlap.
    pub touched: Vec<usize>,
    /// Active interaction group the target already belongs to, if any.
    pub group: Option<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Partitions targets into clusters. Two targets fall in one cluster when
/// their nearest or touched blobs intersect, or when they already share an
/// interaction group. Clusters and their ids come out sorted.
pub fn cluster_targets(claims: &[TargetClaim]) -> Vec<Cluster> {
    let n = claims.len();
    let mut uf = UnionFind((0..n).collect());
    let reach = |c: &TargetClaim| -> Vec<usize> {
        let mut v: Vec<usize> = c
            .nearest
            .into_iter()
            .chain(c.touched.iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let reaches: Vec<Vec<usize>> = claims.iter().map(reach).collect();
    for i in 0..n {
        for j in i + 1..n {
            let shares_blob = reaches[i].iter().any(|b| reaches[j].contains(b));
            let same_group = claims[i].group.is_some() && claims[i].group == claims[j].group;
            if shares_blob || same_group {
                uf.union(i, j);
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Cluster> = Default::default();
    for i in 0..n {
        let root = uf.find(i);
        let entry = by_root.entry(root).or_insert_with(|| Cluster {
            target_ids: vec![],
            blob_ids: vec![],
        });
        entry.target_ids.push(claims[i].target_id);
        entry.blob_ids.extend(reaches[i].iter().copied());
    }
    by_root
        .into_values()
        .map(|mut c| {
            c.target_ids.sort_unstable();
            c.blob_ids.sort_unstable();
            c.blob_ids.dedup();
            c
        })
        .collect()
}

/// Groups of two or more targets whose nearest observations coincide.
pub fn detect_interactions(claims: &[TargetClaim], frame: u64) -> Vec<InteractionGroup> {
    let mut by_blob: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for c in claims {
        if let Some(b) = c.nearest {
            by_blob.entry(b).or_default().push(c.target_id);
        }
    }
    by_blob
        .into_iter()
        .filter(|(_, ids)| ids.len() >= 2)
        .map(|(blob, mut ids)| {
            ids.sort_unstable();
            InteractionGroup {
                target_ids: ids,
                merged_blob_id: blob,
                start_frame: frame,
            }
        })
        .collect()
}

/// How a group's targets spread over the blobs that replaced its merged blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Separation {
    pub blob_ids: Vec<usize>,
    /// Targets each blob can take. Sums to the group size unless there are
    /// more blobs than targets, in which case every capacity is 1.
    pub capacities: Vec<usize>,
}

impl Separation {
    /// Number of distinct blobs the group now covers.
    pub fn m(&self) -> usize {
        self.blob_ids.len()
    }

    /// Targets that end up alone on a blob.
    pub fn resolved(&self, group_size: usize) -> usize {
        if self.blob_ids.len() >= group_size {
            group_size
        } else {
            self.capacities.iter().filter(|&&c| c == 1).count()
        }
    }
}

/// Splits `group_size` targets over blobs by area: each blob takes at least
/// one, the rest go to the blobs most over the single-fish area.
pub fn allocate_capacities(group_size: usize, areas: &[usize], single_area: f64) -> Vec<usize> {
    let k = areas.len();
    if k >= group_size {
        return vec![1; k];
    }
    let mut caps = vec![1usize; k];
    for _ in 0..group_size - k {
        let j = (0..k)
            .max_by(|&a, &b| {
                let ra = areas[a] as f64 / single_area - caps[a] as f64;
                let rb = areas[b] as f64 / single_area - caps[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("at least one blob");
        caps[j] += 1;
    }
    caps
}

/// Checks whether a group's region now holds two or more blobs; `None`
/// while it is still a single merged blob.
pub fn detect_separation(
    group: &InteractionGroup,
    candidates: &[&Observation],
    single_area: f64,
) -> Option<Separation> {
    if candidates.len() < 2 {
        return None;
    }
    let mut blobs: Vec<&Observation> = candidates.to_vec();
    blobs.sort_by_key(|o| o.blob_id);
    let areas: Vec<usize> = blobs.iter().map(|o| o.pixel_count).collect();
    Some(Separation {
        blob_ids: blobs.iter().map(|o| o.blob_id).collect(),
        capacities: allocate_capacities(group.target_ids.len(), &areas, single_area),
    })
}

/// Number of hypotheses `enumerate_assignments` would produce.
pub fn hypothesis_count(n_targets: usize, capacities: &[usize]) -> u128 {
    fn rec(t: usize, n: usize, caps: &mut Vec<usize>) -> u128 {
        if t == n {
            return 1;
        }
        let mut total = 0;
        for j in 0..caps.len() {
            if caps[j] > 0 {
                caps[j] -= 1;
                total += rec(t + 1, n, caps);
                caps[j] += 1;
            }
        }
        total
    }
    rec(0, n_targets, &mut capacities.to_vec())
}

/// Scores every assignment of `target_ids` onto `blob_ids` that respects the
/// capacities. `pair_scores[i][j]` is the summed raw particle weight of
/// target `i` on blob `j`; a hypothesis scores the sum over its pairs.
/// Results are sorted by score, best first (stable for equal scores).
pub fn score_hypotheses(
    target_ids: &[usize],
    blob_ids: &[usize],
    capacities: &[usize],
    pair_scores: &[Vec<f64>],
) -> Vec<LinkingHypothesis> {
    let mut out = Vec::new();
    let mut caps = capacities.to_vec();
    let mut current = Vec::with_capacity(target_ids.len());
    enumerate(
        0,
        target_ids,
        blob_ids,
        &mut caps,
        pair_scores,
        &mut current,
        &mut out,
    );
    out.sort_by(|a: &LinkingHypothesis, b| b.score.total_cmp(&a.score));
    out
}

fn enumerate(
    t: usize,
    target_ids: &[usize],
    blob_ids: &[usize],
    caps: &mut [usize],
    scores: &[Vec<f64>],
    current: &mut Vec<usize>,
    out: &mut Vec<LinkingHypothesis>,
) {
    if t == target_ids.len() {
        // Sum in target order so equal pair sets give bit-equal scores.
        let score = current.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
        let assignment = current
            .iter()
            .enumerate()
            .map(|(i, &j)| (target_ids[i], blob_ids[j]))
            .collect();
        out.push(LinkingHypothesis { assignment, score });
        return;
    }
    for j in 0..blob_ids.len() {
        if caps[j] == 0 {
            continue;
        }
        caps[j] -= 1;
        current.push(j);
        enumerate(t + 1, target_ids, blob_ids, caps, scores, current, out);
        current.pop();
        caps[j] += 1;
    }
}

/// Greedy assignment used beyond `max_enumerable`: repeatedly takes the
/// highest-scoring remaining (target, blob) pair with spare capacity.
pub fn greedy_assignment(
    target_ids: &[usize],
    blob_ids: &[usize],
    capacities: &[usize],
    pair_scores: &[Vec<f64>],
) -> LinkingHypothesis {
    let mut caps = capacities.to_vec();
    let mut done = vec![false; target_ids.len()];
    let mut assignment = Vec::new();
    let mut score = 0.0;
    for _ in 0..target_ids.len() {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in pair_scores.iter().enumerate() {
            if done[i] {
                continue;
            }
            for (j, &s) in row.iter().enumerate() {
                if caps[j] == 0 {
                    continue;
                }
                if best.is_none_or(|(_, _, bs)| s > bs) {
                    best = Some((i, j, s));
                }
            }
        }
        let Some((i, j, s)) = best else { break };
        done[i] = true;
        caps[j] -= 1;
        score += s;
        assignment.push((target_ids[i], blob_ids[j]));
    }
    assignment.sort_unstable();
    LinkingHypothesis { assignment, score }
}

/// Picks the winning hypothesis: highest score, then most agreement with
/// the nearest-neighbor pairing `nn_pairs`, then the lexicographically
/// smallest assignment.
pub fn commit_linking<'a>(
    hypotheses: &'a [LinkingHypothesis],
    nn_pairs: &[(usize, usize)],
) -> Option<&'a LinkingHypothesis> {
    let agreement =
        |h: &LinkingHypothesis| h.assignment.iter().filter(|p| nn_pairs.contains(p)).count();
    hypotheses.iter().min_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| agreement(b).cmp(&agreement(a)))
            .then_with(|| a.assignment.cmp(&b.assignment))
    })
}

/// Among hypotheses scoring within `margin` of the best, the one with the
/// lowest `cost`; remaining ties go through [`commit_linking`].
pub fn commit_near_ties<'a>(
    hypotheses: &'a [LinkingHypothesis],
    nn_pairs: &[(usize, usize)],
    margin: f64,
    cost: impl Fn(&LinkingHypothesis) -> f64,
) -> Option<&'a LinkingHypothesis> {
    let best = hypotheses
        .iter()
        .map(|h| h.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let near: Vec<LinkingHypothesis> = hypotheses
        .iter()
        .filter(|h| h.score >= best * (1.0 - margin))
        .cloned()
        .collect();
    let lowest = near.iter().map(&cost).fold(f64::INFINITY, f64::min);
    let cheapest: Vec<LinkingHypothesis> = near.into_iter().filter(|h| cost(h) <= lowest).collect();
    let pick = commit_linking(&cheapest, nn_pairs)?;
    hypotheses.iter().find(|h| h.assignment == pick.assignment)
}

/// Nearest blob for each target's reference position (its position before
/// the interaction began).
pub fn nearest_pairs(
    references: &[(usize, f64, f64)],
    blobs: &[&Observation],
) -> Vec<(usize, usize)> {
    references
        .iter()
        .filter_map(|&(t, x, y)| {
            blobs
                .iter()
                .min_by(|a, b| {
                    a.distance_to(x, y)
                        .total_cmp(&b.distance_to(x, y))
                        .then(a.blob_id.cmp(&b.blob_id))
                })
                .map(|o| (t, o.blob_id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(m: usize) -> usize {
        (1..=m).product()
    }

    #[test]
    fn two_targets_two_blobs() {
        let hs = score_hypotheses(&[0, 1], &[7, 9], &[1, 1], &[vec![5.0, 1.0], vec![2.0, 4.0]]);
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[0].assignment, vec![(0, 7), (1, 9)]);
        assert_eq!(hs[0].score, 9.0);
        assert_eq!(hs[1].assignment, vec![(0, 9), (1, 7)]);
        assert_eq!(hs[1].score, 3.0);
    }

    #[test]
    fn factorial_counts() {
        for m in 1..=5 {
            let scores = vec![vec![1.0; m]; m];
            let ids: Vec<usize> = (0..m).collect();
            let hs = score_hypotheses(&ids, &ids, &vec![1; m], &scores);
            assert_eq!(hs.len(), factorial(m));
            assert_eq!(hypothesis_count(m, &vec![1; m]), factorial(m) as u128);
        }
    }

    #[test]
    fn partial_separation_counts() {
        // Three targets over a single-fish blob and a two-fish blob.
        assert_eq!(hypothesis_count(3, &[1, 2]), 3);
        assert_eq!(allocate_capacities(3, &[100, 190], 100.0), vec![1, 2]);
        assert_eq!(allocate_capacities(3, &[210, 95], 100.0), vec![2, 1]);
        assert_eq!(
            allocate_capacities(2, &[100, 100, 100], 100.0),
            vec![1, 1, 1]
        );
        // More blobs than targets: injective maps, 3 * 2.
        assert_eq!(hypothesis_count(2, &[1, 1, 1]), 6);
    }

    #[test]
    fn commit_rules() {
        let h = |a: Vec<(usize, usize)>, s| LinkingHypothesis {
            assignment: a,
            score: s,
        };
        let hs = vec![h(vec![(0, 0), (1, 1)], 5.1), h(vec![(0, 1), (1, 0)], 3.2)];
        assert_eq!(
            commit_linking(&hs, &[]).unwrap().assignment,
            hs[0].assignment
        );
        let tie = vec![h(vec![(0, 0), (1, 1)], 4.0), h(vec![(0, 1), (1, 0)], 4.0)];
        assert_eq!(
            commit_linking(&tie, &[(0, 1), (1, 0)]).unwrap().assignment,
            tie[1].assignment
        );
        assert_eq!(
            commit_linking(&tie, &[]).unwrap().assignment,
            tie[0].assignment
        );
        let single = vec![h(vec![(3, 2)], 0.0)];
        assert_eq!(commit_linking(&single, &[]).unwrap(), &single[0]);
        assert!(commit_linking(&[], &[]).is_none());
    }

    #[test]
    fn greedy_takes_best_pairs() {
        let g = greedy_assignment(&[0, 1], &[5, 6], &[1, 1], &[vec![1.0, 3.0], vec![2.0, 2.5]]);
        assert_eq!(g.assignment, vec![(0, 6), (1, 5)]);
        assert_eq!(g.score, 5.0);
    }

    #[test]
    fn clustering() {
        let claim = |t, n: Option<usize>, touched: Vec<usize>| TargetClaim {
            target_id: t,
            nearest: n,
            touched,
            group: None,
        };
        let apart = [claim(0, Some(0), vec![0]), claim(1, Some(1), vec![1])];
        assert_eq!(cluster_targets(&apart).len(), 2);
        assert!(detect_interactions(&apart, 0).is_empty());
        let merged = [claim(0, Some(0), vec![]), claim(1, Some(0), vec![])];
        let groups = detect_interactions(&merged, 4);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].target_ids, vec![0, 1]);
        let three = [
            claim(0, Some(2), vec![]),
            claim(1, Some(2), vec![]),
            claim(2, Some(2), vec![]),
        ];
        assert_eq!(detect_interactions(&three, 0)[0].target_ids.len(), 3);
        let touching = [claim(0, Some(0), vec![0, 1]), claim(1, Some(1), vec![1])];
        let cl = cluster_targets(&touching);
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].blob_ids, vec![0, 1]);
    }
}
