//! Multi-target tracking loop: one particle filter per fish, interaction
//! groups while blobs merge, and joint linking when they split.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::detection::{self, Detections};
use crate::error::{Error, Result};
use crate::filter::{self, ParticleFilter, Proposal, StepParams, StepReport};
use crate::linking::{self, Cluster, InteractionGroup, LinkingConfig, PreCrossing, TargetClaim};
use crate::mask::{FrameMask, LabelImage};
use crate::types::{Ellipse, Observation, TargetState};

/// One row of the trajectory output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub frame: u64,
    pub target_id: usize,
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub weight_max: f64,
    pub interacting: bool,
    pub lost: bool,
}

/// A linking decision taken when targets sharing a region were assigned to
/// blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub frame: u64,
    pub group_targets: Vec<usize>,
    pub blob_ids: Vec<usize>,
    /// `(target_id, blob_id)` pairs of the committed hypothesis.
    pub chosen: Vec<(usize, usize)>,
    /// Scores of every hypothesis, best first.
    pub all_scores: Vec<f64>,
    pub fallback: bool,
}

/// A detected linking error: the estimate ended far from its blob and the
/// target was restarted on the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub frame: u64,
    pub target_id: usize,
    pub predicted_x: f64,
    pub predicted_y: f64,
    pub observed_x: f64,
    pub observed_y: f64,
    pub deviation: f64,
}

/// Manual override: the target is at `(x, y)` on frame `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pin {
    pub frame: u64,
    pub target_id: usize,
    pub blob_id: Option<usize>,
    pub x: f64,
    pub y: f64,
}

/// How targets are created on the first frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Seeding {
    /// One target per blob in labeling order, optionally only the first `n`.
    Blobs(Option<usize>),
    /// Explicit `(target_id, x, y)` seeds, each attached to its nearest blob.
    Positions(Vec<(usize, f64, f64)>),
}

/// Everything the tracker produced for one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameOutput {
    pub frame: u64,
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<EventRecord>,
    pub errors: Vec<ErrorRecord>,
    pub groups: Vec<InteractionGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackerConfig {
    pub step: StepParams,
    pub linking: LinkingConfig,
    pub seed: u64,
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.step.motion.validate()?;
        self.step.appearance.validate()?;
        self.step.filter.validate()?;
        self.linking.validate()
    }
}

/// Per-particle ellipse area and foreground hits split by blob.
#[derive(Debug, Clone, Default)]
struct CoverageTable {
    area: Vec<u64>,
    hits: Vec<Vec<(usize, u64)>>,
}

impl CoverageTable {
    fn build(proposal: &Proposal, labels: &LabelImage) -> Self {
        let mut t = CoverageTable::default();
        for p in &proposal.particles {
            let (area, hits) = crate::appearance::overlap_by_blob(&p.ellipse, labels);
            t.area.push(area);
            t.hits.push(hits);
        }
        t
    }

    fn on(&self, blobs: &[usize]) -> Vec<f64> {
        self.area
            .iter()
            .zip(&self.hits)
            .map(|(&area, hits)| {
                if area == 0 {
                    return 0.0;
                }
                let w: u64 = hits
                    .iter()
                    .filter(|(b, _)| blobs.contains(b))
                    .map(|h| h.1)
                    .sum();
                w as f64 / area as f64
            })
            .collect()
    }

    fn per_particle(&self, blob: usize) -> impl Iterator<Item = f64> + '_ {
        self.area.iter().zip(&self.hits).map(move |(&area, hits)| {
            let w = hits.iter().find(|h| h.0 == blob).map_or(0, |h| h.1);
            if area == 0 {
                0.0
            } else {
                w as f64 / area as f64
            }
        })
    }

    fn total_on(&self, blob: usize) -> f64 {
        self.per_particle(blob).sum()
    }

    fn max_on(&self, blob: usize) -> f64 {
        self.per_particle(blob).fold(0.0, f64::max)
    }

    fn touched(&self, min_coverage: f64) -> Vec<usize> {
        let mut blobs: Vec<usize> = self.hits.iter().flatten().map(|h| h.0).collect();
        blobs.sort_unstable();
        blobs.dedup();
        blobs.retain(|&b| self.max_on(b) >= min_coverage);
        blobs
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Job {
    /// Ordinary update against the listed blobs, with a one-to-one
    /// observation when there is one.
    Clean {
        view: Vec<usize>,
        obs: Option<usize>,
    },
    /// Interacting update on a merged blob.
    Group { blob: usize },
    /// Restart on a blob after leaving an interaction.
    Reinit { blob: usize },
    /// No blob to weigh against.
    Coast,
    /// Dropped; held in place until it can be reacquired.
    Hold,
}

/// Tracks a fixed set of targets through a sequence of masks.
pub struct Tracker {
    config: TrackerConfig,
    filters: Vec<ParticleFilter>,
    snapshots: Vec<Option<PreCrossing>>,
    /// Merged blob each target shared on the previous frame.
    group_key: Vec<Option<usize>>,
    single_area: f64,
    area_samples: u64,
    next_frame: u64,
    bounds: (u32, u32),
    pool: Option<Arc<ThreadPool>>,
}

impl Tracker {
    /// Builds a tracker on the first frame.
    pub fn start(
        config: TrackerConfig,
        first: &FrameMask,
        seeding: &Seeding,
    ) -> Result<(Self, FrameOutput)> {
        config.validate()?;
        let det = detection::detect(first, config.step.filter.min_blob_area)?;
        let obs = &det.observations;
        let mut states: Vec<TargetState> = Vec::new();
        match seeding {
            Seeding::Blobs(n) => {
                let n = n.unwrap_or(obs.len());
                if n == 0 || n > obs.len() {
                    return Err(Error::Initialization(format!(
                        "{n} targets requested but the first frame has {} blobs",
                        obs.len()
                    )));
                }
                states.extend(
                    obs.iter()
                        .take(n)
                        .enumerate()
                        .map(|(i, o)| TargetState::from_observation(i, o)),
                );
            }
            Seeding::Positions(seeds) => {
                if seeds.is_empty() || seeds.len() > obs.len() {
                    return Err(Error::Initialization(format!(
                        "{} seeds given but the first frame has {} blobs",
                        seeds.len(),
                        obs.len()
                    )));
                }
                for &(id, x, y) in seeds {
                    let o = nearest_blob(obs, &det.labels, x, y)
                        .ok_or_else(|| Error::Initialization(format!("no blob near seed {id}")))?;
                    let shared = seeds
                        .iter()
                        .filter(|s| {
                            nearest_blob(obs, &det.labels, s.1, s.2).map(|b| b.blob_id)
                                == Some(o.blob_id)
                        })
                        .count();
                    let mut st = TargetState::from_observation(id, o);
                    if shared > 1 {
                        st.lx = x;
                        st.ly = y;
                        st.ellipse = st.ellipse.moved_to(x, y);
                    }
                    states.push(st);
                }
            }
        }
        let n = states.len();
        let area: f64 = if matches!(seeding, Seeding::Blobs(_)) {
            obs.iter()
                .take(n)
                .map(|o| o.pixel_count as f64)
                .sum::<f64>()
                / n as f64
        } else {
            obs.iter().map(|o| o.pixel_count as f64).sum::<f64>() / obs.len() as f64
        };
        let filters: Vec<ParticleFilter> = states
            .into_iter()
            .map(|s| {
                let rng = filter::target_rng(config.seed, s.id);
                ParticleFilter::new(s, config.step.filter.n_particles, rng)
            })
            .collect();
        let tracker = Tracker {
            config,
            filters,
            snapshots: vec![None; n],
            group_key: vec![None; n],
            single_area: area,
            area_samples: n as u64,
            next_frame: first.frame_index + 1,
            bounds: (first.width, first.height),
            pool: None,
        };
        let rows = tracker
            .filters
            .iter()
            .map(|f| row(first.frame_index, &f.state, 1.0, false))
            .collect();
        let out = FrameOutput {
            frame: first.frame_index,
            rows,
            ..Default::default()
        };
        Ok((tracker, out))
    }

    /// Runs the per-target work on a dedicated pool of `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        self.pool = Some(Arc::new(pool));
        Ok(self)
    }

    pub fn filters(&self) -> &[ParticleFilter] {
        &self.filters
    }

    pub fn target_ids(&self) -> Vec<usize> {
        self.filters.iter().map(|f| f.state.id).collect()
    }

    /// Mean pixel count of a single clean fish blob seen so far.
    pub fn single_area(&self) -> f64 {
        self.single_area
    }

    pub fn process(&mut self, mask: &FrameMask) -> Result<FrameOutput> {
        self.process_pinned(mask, &[])
    }

    /// Tracks one frame, then applies any pins for it.
    pub fn process_pinned(&mut self, mask: &FrameMask, pins: &[Pin]) -> Result<FrameOutput> {
        if (mask.width, mask.height) != self.bounds {
            return Err(Error::InvalidArgument(format!(
                "frame {} is {}x{}, expected {}x{}",
                mask.frame_index, mask.width, mask.height, self.bounds.0, self.bounds.1
            )));
        }
        let frame = mask.frame_index;
        self.next_frame = frame + 1;
        let det = detection::detect(mask, self.config.step.filter.min_blob_area)?;
        let cfg = self.config;
        let bounds = self.bounds;
        let max_coast = cfg.step.filter.max_coast;

        let labels = &det.labels;
        let filters = &mut self.filters;
        let staged: Vec<Option<(Proposal, CoverageTable)>> = install(&self.pool, || {
            filters
                .par_iter_mut()
                .map(|f| {
                    if f.coasting_frames() > max_coast {
                        return Ok(None);
                    }
                    let p = f.propose(&cfg.step, bounds)?;
                    let t = CoverageTable::build(&p, labels);
                    Ok(Some((p, t)))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut out = FrameOutput {
            frame,
            ..Default::default()
        };
        let jobs = self.plan(frame, &det, &staged, &mut out);

        // Targets entering an interaction keep their pre-crossing motion.
        for (i, job) in jobs.iter().enumerate() {
            if let Job::Group { blob } = job {
                if self.snapshots[i].is_none() {
                    let st = &self.filters[i].state;
                    self.snapshots[i] = Some(PreCrossing {
                        start_frame: frame,
                        x: st.lx,
                        y: st.ly,
                        dist_state: st.dist_state,
                        heading: st.heading,
                    });
                }
                self.filters[i].state.interacting = true;
                self.group_key[i] = Some(*blob);
            } else if !matches!(job, Job::Coast | Job::Hold) {
                self.group_key[i] = None;
            }
        }

        let snapshots = &self.snapshots;
        let obs = &det.observations;
        let filters = &mut self.filters;
        let results: Vec<(Option<StepReport>, Option<ErrorRecord>)> = install(&self.pool, || {
            filters
                .par_iter_mut()
                .zip(staged.into_par_iter())
                .zip(jobs.par_iter())
                .enumerate()
                .map(|(i, ((f, staged), job))| {
                    apply_job(f, staged, job, snapshots[i], obs, &cfg, frame, bounds)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut claimed: Vec<bool> = vec![false; obs.len()];
        for (i, job) in jobs.iter().enumerate() {
            match job {
                Job::Clean { view, obs: o } => {
                    view.iter().for_each(|&b| claimed[b] = true);
                    if let Some(b) = o {
                        self.record_area(obs[*b].pixel_count);
                    }
                }
                Job::Group { blob } => claimed[*blob] = true,
                Job::Reinit { blob } => {
                    claimed[*blob] = true;
                    self.snapshots[i] = None;
                    self.group_key[i] = None;
                }
                Job::Coast | Job::Hold => {}
            }
        }

        let mut reports: Vec<Option<StepReport>> = Vec::with_capacity(results.len());
        for (report, err) in results {
            if let Some(e) = err {
                out.errors.push(e);
            }
            reports.push(report);
        }

        self.reacquire(frame, obs, &mut claimed, &mut out);

        for pin in pins.iter().filter(|p| p.frame == frame) {
            self.apply_pin(pin, &det);
        }

        let mut rows: Vec<TrajectoryRow> = self
            .filters
            .iter()
            .zip(&reports)
            .map(|(f, rep)| {
                let lost = f.coasting_frames() > 0;
                let wmax = rep.as_ref().map_or(0.0, |r| r.weight_max);
                row(frame, &f.state, wmax, lost)
            })
            .collect();
        rows.sort_by_key(|r| r.target_id);
        out.rows = rows;
        out.groups = self.groups(frame);
        Ok(out)
    }

    fn record_area(&mut self, pixels: usize) {
        self.area_samples += 1;
        self.single_area += (pixels as f64 - self.single_area) / self.area_samples as f64;
    }

    /// Decides what each target does this frame.
    fn plan(
        &self,
        frame: u64,
        det: &Detections,
        staged: &[Option<(Proposal, CoverageTable)>],
        out: &mut FrameOutput,
    ) -> Vec<Job> {
        let n = self.filters.len();
        let cfg = &self.config;
        let obs = &det.observations;
        let mut jobs = vec![Job::Hold; n];
        let mut claims = Vec::new();
        let mut gates = vec![((0.0, 0.0), 0.0); n];
        for (i, (f, st)) in self.filters.iter().zip(staged).enumerate() {
            let Some((p, table)) = st else { continue };
            let radius = f.gating_radius(&cfg.step, p.predicted_distance);
            gates[i] = (p.predicted, radius);
            let nearest =
                filter::associate_nn(p.predicted.0, p.predicted.1, obs, radius).map(|o| o.blob_id);
            let mut touched = table.touched(cfg.linking.touch_coverage);
            if self.group_key[i].is_some() {
                // Members of a merged group also reach for any blob inside
                // the gate, so a split is seen even when the cloud lags.
                for o in obs {
                    let d = (o.x - p.predicted.0).hypot(o.y - p.predicted.1);
                    if d <= radius && !touched.contains(&o.blob_id) {
                        touched.push(o.blob_id);
                    }
                }
                touched.sort_unstable();
            }
            claims.push(TargetClaim {
                target_id: i,
                nearest,
                touched,
                group: self.group_key[i],
            });
        }
        let table = |i: usize| &staged[i].as_ref().expect("active target").1;

        let clusters = linking::cluster_targets(&claims);
        let mut taken = vec![false; obs.len()];
        clusters
            .iter()
            .flat_map(|c| &c.blob_ids)
            .for_each(|&b| taken[b] = true);

        for Cluster {
            target_ids: members,
            blob_ids: mut blobs,
        } in clusters
        {
            if members.len() == 1 {
                let i = members[0];
                let claim = claims.iter().find(|c| c.target_id == i).expect("claim");
                let assoc = claim.nearest.or_else(|| {
                    claim.touched.iter().copied().max_by(|&a, &b| {
                        table(i)
                            .total_on(a)
                            .total_cmp(&table(i).total_on(b))
                            .then(b.cmp(&a))
                    })
                });
                jobs[i] = match (assoc, self.snapshots[i].is_some()) {
                    (Some(b), true) => {
                        out.events.push(EventRecord {
                            frame,
                            group_targets: vec![self.filters[i].state.id],
                            blob_ids: vec![b],
                            chosen: vec![(self.filters[i].state.id, b)],
                            all_scores: vec![table(i).total_on(b)],
                            fallback: false,
                        });
                        Job::Reinit { blob: b }
                    }
                    (Some(b), false) => Job::Clean {
                        view: vec![b],
                        obs: Some(b),
                    },
                    (None, _) => Job::Coast,
                };
                continue;
            }
            if blobs.len() == 1 {
                // More targets than the blob can hold: free fish-sized blobs
                // inside a member's gate join the decision.
                let fits = (obs[blobs[0]].pixel_count as f64 / self.single_area)
                    .round()
                    .max(1.0) as usize;
                if members.len() > fits {
                    let mut spare: Vec<(f64, usize)> = obs
                        .iter()
                        .filter(|o| {
                            !taken[o.blob_id] && o.pixel_count as f64 >= 0.5 * self.single_area
                        })
                        .filter_map(|o| {
                            members
                                .iter()
                                .filter_map(|&i| {
                                    let ((px, py), r) = gates[i];
                                    let d = o.distance_to(px, py);
                                    (d <= r).then_some(d)
                                })
                                .min_by(f64::total_cmp)
                                .map(|d| (d, o.blob_id))
                        })
                        .collect();
                    spare.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    for &(_, b) in spare.iter().take(members.len() - fits) {
                        taken[b] = true;
                        blobs.push(b);
                    }
                    blobs.sort_unstable();
                }
            }
            match blobs.len() {
                0 => members.iter().for_each(|&i| jobs[i] = Job::Coast),
                1 => members
                    .iter()
                    .for_each(|&i| jobs[i] = Job::Group { blob: blobs[0] }),
                _ => self.resolve(frame, &members, &blobs, obs, staged, &mut jobs, out),
            }
        }
        jobs
    }

    /// Assigns a cluster's targets to its blobs by joint hypothesis scoring.
    #[allow(clippy::too_many_arguments)]
    fn resolve(
        &self,
        frame: u64,
        members: &[usize],
        blobs: &[usize],
        obs: &[Observation],
        staged: &[Option<(Proposal, CoverageTable)>],
        jobs: &mut [Job],
        out: &mut FrameOutput,
    ) {
        let cfg = &self.config.linking;
        let table = |i: usize| &staged[i].as_ref().expect("active target").1;
        let predicted = |i: usize| staged[i].as_ref().expect("active target").0.predicted;
        let areas: Vec<usize> = blobs.iter().map(|&b| obs[b].pixel_count).collect();
        let capacities = linking::allocate_capacities(members.len(), &areas, self.single_area);
        let scores: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                blobs
                    .iter()
                    .map(|&b| {
                        if cfg.appearance {
                            table(i).total_on(b)
                        } else {
                            1.0
                        }
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<(usize, f64, f64)> = members
            .iter()
            .map(|&i| match self.snapshots[i] {
                Some(s) => (i, s.x, s.y),
                None => (i, self.filters[i].state.lx, self.filters[i].state.ly),
            })
            .collect();
        let blob_obs: Vec<&Observation> = blobs.iter().map(|&b| &obs[b]).collect();
        let nn = linking::nearest_pairs(&refs, &blob_obs);

        let fallback = blobs.len() > cfg.max_enumerable;
        let (chosen, all_scores) = if fallback {
            let g = linking::greedy_assignment(members, blobs, &capacities, &scores);
            let s = g.score;
            (g, vec![s])
        } else {
            let hs = linking::score_hypotheses(members, blobs, &capacities, &scores);
            let best = if cfg.appearance {
                let cost = |h: &linking::LinkingHypothesis| {
                    h.assignment
                        .iter()
                        .map(|&(i, b)| {
                            let (px, py) = predicted(i);
                            obs[b].distance_to(px, py)
                        })
                        .sum::<f64>()
                };
                linking::commit_near_ties(&hs, &nn, cfg.tie_margin, cost)
            } else {
                linking::commit_linking(&hs, &nn)
            }
            .expect("at least one hypothesis")
            .clone();
            (best, hs.iter().map(|h| h.score).collect())
        };

        let load = |b: usize| chosen.assignment.iter().filter(|p| p.1 == b).count();
        for &(i, b) in &chosen.assignment {
            jobs[i] = if load(b) > 1 {
                Job::Group { blob: b }
            } else if self.snapshots[i].is_some() {
                Job::Reinit { blob: b }
            } else {
                Job::Clean {
                    view: vec![b],
                    obs: Some(b),
                }
            };
        }
        let id = |i: usize| self.filters[i].state.id;
        let mut chosen_ids: Vec<(usize, usize)> =
            chosen.assignment.iter().map(|&(i, b)| (id(i), b)).collect();
        chosen_ids.sort_unstable();
        out.events.push(EventRecord {
            frame,
            group_targets: members.iter().map(|&i| id(i)).collect(),
            blob_ids: blobs.to_vec(),
            chosen: chosen_ids,
            all_scores,
            fallback,
        });
    }

    /// Dropped targets take the nearest unclaimed fish-sized blob.
    fn reacquire(
        &mut self,
        frame: u64,
        obs: &[Observation],
        claimed: &mut [bool],
        out: &mut FrameOutput,
    ) {
        let max_coast = self.config.step.filter.max_coast;
        for i in 0..self.filters.len() {
            if self.filters[i].coasting_frames() <= max_coast {
                continue;
            }
            let (x, y) = (self.filters[i].state.lx, self.filters[i].state.ly);
            let candidate = obs
                .iter()
                .filter(|o| !claimed[o.blob_id] && o.pixel_count as f64 >= 0.5 * self.single_area)
                .min_by(|a, b| a.distance_to(x, y).total_cmp(&b.distance_to(x, y)));
            if let Some(o) = candidate {
                claimed[o.blob_id] = true;
                let f = &mut self.filters[i];
                out.errors.push(ErrorRecord {
                    frame,
                    target_id: f.state.id,
                    predicted_x: x,
                    predicted_y: y,
                    observed_x: o.x,
                    observed_y: o.y,
                    deviation: o.distance_to(x, y),
                });
                f.state.interacting = false;
                f.recover_on(o);
                self.snapshots[i] = None;
                self.group_key[i] = None;
            }
        }
    }

    fn apply_pin(&mut self, pin: &Pin, det: &Detections) {
        let Some(i) = self
            .filters
            .iter()
            .position(|f| f.state.id == pin.target_id)
        else {
            return;
        };
        let blob = pin
            .blob_id
            .filter(|&b| b < det.observations.len())
            .or_else(|| {
                let (c, r) = (pin.x.floor(), pin.y.floor());
                if c >= 0.0
                    && r >= 0.0
                    && (c as u32) < det.labels.width
                    && (r as u32) < det.labels.height
                {
                    det.labels.blob_at(c as u32, r as u32)
                } else {
                    None
                }
            });
        let f = &mut self.filters[i];
        f.state.interacting = false;
        if let Some(b) = blob {
            let hint = f.state.heading;
            f.reinitialize_on(&det.observations[b], hint);
        }
        f.reinitialize_at(pin.x, pin.y);
        self.snapshots[i] = None;
        self.group_key[i] = None;
    }

    /// Interaction groups active after the last processed frame.
    pub fn groups(&self, _frame: u64) -> Vec<InteractionGroup> {
        let mut by_key: std::collections::BTreeMap<usize, InteractionGroup> = Default::default();
        for (i, key) in self.group_key.iter().enumerate() {
            let (Some(k), Some(s)) = (key, self.snapshots[i]) else {
                continue;
            };
            let g = by_key.entry(*k).or_insert_with(|| InteractionGroup {
                target_ids: vec![],
                merged_blob_id: *k,
                start_frame: s.start_frame,
            });
            g.target_ids.push(self.filters[i].state.id);
            g.start_frame = g.start_frame.min(s.start_frame);
        }
        by_key
            .into_values()
            .filter(|g| g.target_ids.len() > 1)
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_job(
    f: &mut ParticleFilter,
    staged: Option<(Proposal, CoverageTable)>,
    job: &Job,
    snapshot: Option<PreCrossing>,
    obs: &[Observation],
    cfg: &TrackerConfig,
    frame: u64,
    bounds: (u32, u32),
) -> Result<(Option<StepReport>, Option<ErrorRecord>)> {
    let Some((proposal, table)) = staged else {
        return Ok((None, None));
    };
    let params = &cfg.step;
    let predicted = proposal.predicted;
    match job {
        Job::Hold => Ok((None, None)),
        Job::Coast => {
            let zeros = vec![0.0; proposal.particles.len()];
            Ok((
                Some(f.update(proposal, &zeros, None, params, bounds)?),
                None,
            ))
        }
        Job::Group { blob } => {
            let cov = table.on(&[*blob]);
            let report = f.update(proposal, &cov, None, params, bounds)?;
            if report.lost {
                // Slid off the merged blob: restart on it, keeping motion.
                let o = &obs[*blob];
                f.reinitialize_at(o.x, o.y);
                return Ok((Some(report_from(f, 0.0)), None));
            }
            Ok((Some(report), None))
        }
        Job::Reinit { blob } => {
            let o = &obs[*blob];
            let weight_max = table.max_on(*blob);
            f.state.interacting = false;
            if let Some(s) = snapshot {
                f.state.dist_state = s.dist_state;
            }
            let hint = snapshot.and_then(|s| s.heading).or(f.state.heading);
            f.reinitialize_on(o, hint);
            Ok((Some(report_from(f, weight_max)), None))
        }
        Job::Clean { view, obs: assoc } => {
            f.state.interacting = false;
            let cov = table.on(view);
            let clean = assoc.map(|b| &obs[b]);
            let report = f.update(proposal, &cov, clean, params, bounds)?;
            let Some(o) = clean else {
                return Ok((Some(report), None));
            };
            let limit = params.filter.error_deviation_lengths * f.state.mean_a;
            if report.lost || filter::check_linking_error(&f.state, o, limit) {
                let err = ErrorRecord {
                    frame,
                    target_id: f.state.id,
                    predicted_x: predicted.0,
                    predicted_y: predicted.1,
                    observed_x: o.x,
                    observed_y: o.y,
                    deviation: o.distance_to(f.state.lx, f.state.ly),
                };
                f.recover_on(o);
                let mut r = report_from(f, report.weight_max);
                r.clamped = report.clamped;
                return Ok((Some(r), Some(err)));
            }
            Ok((Some(report), None))
        }
    }
}

fn install<T: Send>(pool: &Option<Arc<ThreadPool>>, work: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(work),
        None => work(),
    }
}

fn report_from(f: &ParticleFilter, weight_max: f64) -> StepReport {
    StepReport {
        target_id: f.state.id,
        x: f.state.lx,
        y: f.state.ly,
        ellipse: f.state.ellipse,
        weight_max,
        interacting: f.state.interacting,
        lost: false,
        dropped: false,
        clamped: false,
        ess: f.particles().len() as f64,
        resampled: false,
    }
}

fn row(frame: u64, st: &TargetState, weight_max: f64, lost: bool) -> TrajectoryRow {
    let e: &Ellipse = &st.ellipse;
    TrajectoryRow {
        frame,
        target_id: st.id,
        x: st.lx,
        y: st.ly,
        a: e.a,
        b: e.b,
        delta: e.delta,
        weight_max,
        interacting: st.interacting,
        lost,
    }
}

/// Blob under `(x, y)`, else the one with the nearest centroid.
fn nearest_blob<'a>(
    obs: &'a [Observation],
    labels: &LabelImage,
    x: f64,
    y: f64,
) -> Option<&'a Observation> {
    let (c, r) = (x.floor(), y.floor());
    if c >= 0.0 && r >= 0.0 && (c as u32) < labels.width && (r as u32) < labels.height {
        if let Some(b) = labels.blob_at(c as u32, r as u32) {
            return obs.get(b);
        }
    }
    obs.iter()
        .min_by(|a, b| a.distance_to(x, y).total_cmp(&b.distance_to(x, y)))
}

/// Tracks a whole sequence and collects every frame's output.
pub fn track_sequence<I>(
    config: TrackerConfig,
    frames: I,
    seeding: &Seeding,
    pins: &[Pin],
    threads: Option<usize>,
) -> Result<Vec<FrameOutput>>
where
    I: IntoIterator<Item = Result<FrameMask>>,
{
    let mut it = frames.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("no frames to track".into()))??;
    let (mut tracker, mut first_out) = Tracker::start(config, &first, seeding)?;
    if let Some(t) = threads {
        tracker = tracker.with_threads(t)?;
    }
    for pin in pins.iter().filter(|p| p.frame == first.frame_index) {
        if let Some(r) = first_out
            .rows
            .iter_mut()
            .find(|r| r.target_id == pin.target_id)
        {
            r.x = pin.x;
            r.y = pin.y;
        }
        let det = detection::detect(&first, config.step.filter.min_blob_area)?;
        tracker.apply_pin(pin, &det);
    }
    let mut outputs = vec![first_out];
    for mask in it {
        outputs.push(tracker.process_pinned(&mask?, pins)?);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_mask(w: u32, h: u32, centers: &[(f64, f64)], r: f64, frame: u64) -> FrameMask {
        let mut m = FrameMask::empty(w, h, frame);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if centers
                    .iter()
                    .any(|&(cx, cy)| (px - cx).hypot(py - cy) <= r)
                {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn too_many_targets_abort() {
        let m = disc_mask(60, 60, &[(30.0, 30.0)], 5.0, 0);
        let r = Tracker::start(TrackerConfig::default(), &m, &Seeding::Blobs(Some(2)));
        assert!(matches!(r, Err(Error::Initialization(_))));
        let empty = FrameMask::empty(60, 60, 0);
        assert!(Tracker::start(TrackerConfig::default(), &empty, &Seeding::Blobs(None)).is_err());
    }

    #[test]
    fn separated_targets_keep_identity() {
        let frames: Vec<Result<FrameMask>> = (0..20)
            .map(|t| {
                let s = t as f64 * 2.0;
                Ok(disc_mask(
                    200,
                    100,
                    &[(20.0 + s, 30.0), (20.0 + s, 70.0)],
                    5.0,
                    t,
                ))
            })
            .collect();
        let out = track_sequence(
            TrackerConfig::default(),
            frames,
            &Seeding::Blobs(None),
            &[],
            None,
        )
        .unwrap();
        let last = out.last().unwrap();
        assert!((last.rows[0].y - 30.0).abs() < 2.0);
        assert!((last.rows[1].y - 70.0).abs() < 2.0);
        assert!((last.rows[0].x - 58.0).abs() < 3.0, "x={}", last.rows[0].x);
        assert!(out.iter().all(|o| o.groups.is_empty()));
    }

    #[test]
    fn merge_forms_group() {
        // Two discs that drift together and overlap from frame 5 on.
        let frames: Vec<Result<FrameMask>> = (0..10)
            .map(|t| {
                let gap = (30.0 - 4.0 * t as f64).max(4.0);
                Ok(disc_mask(
                    120,
                    80,
                    &[(60.0 - gap / 2.0, 40.0), (60.0 + gap / 2.0, 40.0)],
                    5.0,
                    t,
                ))
            })
            .collect();
        let out = track_sequence(
            TrackerConfig::default(),
            frames,
            &Seeding::Blobs(None),
            &[],
            None,
        )
        .unwrap();
        let last = out.last().unwrap();
        assert_eq!(last.groups.len(), 1);
        assert_eq!(last.groups[0].target_ids, vec![0, 1]);
        assert!(last.rows.iter().all(|r| r.interacting));
    }

    #[test]
    fn threads_do_not_change_results() {
        let frames = || -> Vec<Result<FrameMask>> {
            (0..15)
                .map(|t| {
                    Ok(disc_mask(
                        150,
                        100,
                        &[
                            (20.0 + 3.0 * t as f64, 50.0),
                            (120.0, 20.0 + 2.0 * t as f64),
                        ],
                        5.0,
                        t,
                    ))
                })
                .collect()
        };
        let a = track_sequence(
            TrackerConfig::default(),
            frames(),
            &Seeding::Blobs(None),
            &[],
            Some(1),
        )
        .unwrap();
        let b = track_sequence(
            TrackerConfig::default(),
            frames(),
            &Seeding::Blobs(None),
            &[],
            Some(4),
        )
        .unwrap();
        let rows = |o: &Vec<FrameOutput>| o.iter().flat_map(|f| f.rows.clone()).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
    }
}
