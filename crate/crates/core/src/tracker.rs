//! Track lifecycle: association by paired-box IoU, births, deaths, and the
//! per-track solve and marginalization chain.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correspond::DEFAULT_MATCH_THRESHOLD;
use crate::cues::{DenseCueFrame, PairedBoxes, StereoFrame};
use crate::error::{Error, Result};
use crate::evalmot::assign;
use crate::geometry::{back_project, iou2d, theta_from_alpha, Box2D, Box3D, ObjectState, StereoRig, Vec2};
use crate::optim::{
    marginalize, solve_single_frame, solve_two_frame, solve_with_prior, FrameData, MarginalPrior, ObjectProblem,
    OptimizerWeights, ProblemTerms, SolveReport, SolverConfig, TemporalMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Dead,
}

/// Where the regressed box of a detection comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressSource {
    /// Centroid projection at the initial box depth, yaw from the observation angle.
    #[default]
    Cues,
    /// The detection's initial 3D box as is.
    InitialBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Minimum 2D IoU between a track's last box and a detection's previous box.
    pub iou_threshold: f64,
    /// Optimal instead of greedy association.
    pub exhaustive: bool,
    /// Consecutive misses after which a track dies.
    pub max_misses: usize,
    pub terms: ProblemTerms,
    pub weights: OptimizerWeights,
    pub solver: SolverConfig,
    /// Pixels sampled per object and frame for the dense terms.
    pub sample_budget: usize,
    /// Local-coordinate distance (m) under which pixels correspond across frames.
    pub match_threshold: f64,
    pub regress_source: RegressSource,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            exhaustive: false,
            max_misses: 2,
            terms: ProblemTerms::default(),
            weights: OptimizerWeights::default(),
            solver: SolverConfig::default(),
            sample_budget: 500,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            regress_source: RegressSource::Cues,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!("iou_threshold must be in (0, 1], got {}", self.iou_threshold)));
        }
        if self.max_misses == 0 {
            return Err(Error::InvalidConfig("max_misses must be at least 1".into()));
        }
        if self.sample_budget == 0 {
            return Err(Error::InvalidConfig("sample_budget must be positive".into()));
        }
        if !(self.match_threshold > 0.0) {
            return Err(Error::InvalidConfig(format!("match_threshold must be positive, got {}", self.match_threshold)));
        }
        self.weights.validate()
    }

    /// Regressed boxes only, no optimization.
    pub fn regress_only(&self) -> bool {
        !self.terms.spatial && self.terms.temporal == TemporalMode::None
    }
}

/// One frame of a track's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub frame: usize,
    pub track_id: u64,
    pub bbox: Box3D,
    /// False when the solve failed and the regressed box stands in.
    pub converged: bool,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub status: TrackStatus,
    pub history: Vec<TrackBox>,
    pub prior: Option<MarginalPrior>,
    /// Paired boxes of the last matched detection.
    pub last_boxes: PairedBoxes,
    pub misses: usize,
    pub hits: usize,
    /// Cues, images and state of the last frame that anchors the solve chain.
    anchor: Option<Anchor>,
}

#[derive(Debug, Clone)]
struct Anchor {
    cues: DenseCueFrame,
    stereo: Arc<StereoFrame>,
    state: ObjectState,
}

impl Track {
    pub fn last_frame(&self) -> Option<usize> {
        self.history.last().map(|b| b.frame)
    }

    pub fn is_alive(&self) -> bool {
        self.status != TrackStatus::Dead
    }
}

/// All detections of one timestamp; cue track ids are ignored.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub frame: usize,
    pub stereo: Arc<StereoFrame>,
    pub detections: Vec<DenseCueFrame>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)`
    pub matches: Vec<(usize, usize)>,
    pub births: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Matches detections to tracks by the IoU between each track's last current
/// box and each detection's previous box.
pub fn associate(detections: &[PairedBoxes], tracks: &[Box2D], iou_threshold: f64, exhaustive: bool) -> Association {
    let scores: Vec<Vec<Option<f64>>> =
        tracks.iter().map(|t| detections.iter().map(|d| d.previous.map(|p| iou2d(t, &p))).collect()).collect();
    associate_scores(&scores, detections.len(), iou_threshold, exhaustive)
}

/// Association over a `tracks x detections` similarity table; `None` marks
/// pairs that cannot match.
pub fn associate_scores(
    scores: &[Vec<Option<f64>>],
    detections: usize,
    threshold: f64,
    exhaustive: bool,
) -> Association {
    let tracks = scores.len();
    let allowed = |t: usize, d: usize| scores[t][d].filter(|v| *v >= threshold);
    let mut matches = Vec::new();
    if exhaustive {
        let cost: Vec<Vec<Option<f64>>> =
            (0..tracks).map(|t| (0..detections).map(|d| allowed(t, d).map(|v| -v)).collect()).collect();
        matches = assign(&cost);
    } else {
        let mut candidates: Vec<(f64, usize, usize)> = (0..tracks)
            .flat_map(|t| (0..detections).filter_map(move |d| allowed(t, d).map(|v| (v, t, d))))
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut t_used = vec![false; tracks];
        let mut d_used = vec![false; detections];
        for (_, t, d) in candidates {
            if !t_used[t] && !d_used[d] {
                t_used[t] = true;
                d_used[d] = true;
                matches.push((t, d));
            }
        }
        matches.sort_unstable();
    }
    let births = (0..detections).filter(|d| !matches.iter().any(|m| m.1 == *d)).collect();
    let unmatched_tracks = (0..tracks).filter(|t| !matches.iter().any(|m| m.0 == *t)).collect();
    Association { matches, births, unmatched_tracks }
}

/// The detection's box before optimization.
pub fn regressed_box(cues: &DenseCueFrame, rig: &StereoRig, source: RegressSource) -> Result<Box3D> {
    match source {
        RegressSource::InitialBox => Ok(cues.initial_box),
        RegressSource::Cues => {
            let p = back_project(&Vec2::from(cues.centroid_projection), cues.initial_box.state.position.z, &rig.intrinsics)?;
            let yaw = theta_from_alpha(cues.observation_angle, &p)?;
            Ok(Box3D::new(ObjectState::new(p.x, p.y, p.z, yaw), cues.initial_box.dimensions))
        }
    }
}

/// Per-frame tracker output: one box per matched track or birth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub boxes: Vec<TrackBox>,
    /// Solver reports of this frame, by track id.
    pub reports: Vec<(u64, SolveReport)>,
}

pub struct Tracker {
    rig: StereoRig,
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(rig: StereoRig, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { rig, config, tracks: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// All tracks ever created, dead ones included, in id order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, input: FrameInput) -> Result<FrameOutput> {
        if self.last_frame.is_some_and(|f| input.frame <= f) {
            return Err(Error::Contract(format!(
                "frame {} after frame {}",
                input.frame,
                self.last_frame.unwrap_or_default()
            )));
        }
        for d in &input.detections {
            if d.frame != input.frame || !d.is_consistent() {
                return Err(Error::Contract(format!("malformed detection for frame {}", input.frame)));
            }
        }
        self.last_frame = Some(input.frame);

        let live: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].is_alive()).collect();
        let track_boxes: Vec<Box2D> = live.iter().map(|&i| self.tracks[i].last_boxes.current).collect();
        let det_boxes: Vec<PairedBoxes> = input.detections.iter().map(|d| d.paired_boxes).collect();
        let assoc = associate(&det_boxes, &track_boxes, self.config.iou_threshold, self.config.exhaustive);

        let mut out = FrameOutput { frame: input.frame, boxes: Vec::new(), reports: Vec::new() };
        for &(t, d) in &assoc.matches {
            let idx = live[t];
            let report = self.update(idx, &input.detections[d], &input.stereo)?;
            let track = &self.tracks[idx];
            out.boxes.push(track.history.last().cloned().expect("matched track has history"));
            if let Some(r) = report {
                out.reports.push((track.id, r));
            }
        }
        for &t in &assoc.unmatched_tracks {
            let track = &mut self.tracks[live[t]];
            track.misses += 1;
            track.status = if track.misses >= self.config.max_misses { TrackStatus::Dead } else { TrackStatus::Lost };
        }
        for &d in &assoc.births {
            let cues = &input.detections[d];
            let bbox = regressed_box(cues, &self.rig, self.config.regress_source).unwrap_or(cues.initial_box);
            let id = self.next_id;
            self.next_id += 1;
            let first = TrackBox { frame: input.frame, track_id: id, bbox, converged: true, cost: 0.0 };
            out.boxes.push(first.clone());
            self.tracks.push(Track {
                id,
                status: TrackStatus::Tentative,
                history: vec![first],
                prior: None,
                last_boxes: cues.paired_boxes,
                misses: 0,
                hits: 1,
                anchor: Some(Anchor { cues: strip_id(cues), stereo: input.stereo.clone(), state: bbox.state }),
            });
        }
        out.boxes.sort_by_key(|b| b.track_id);
        Ok(out)
    }

    fn update(&mut self, idx: usize, cues: &DenseCueFrame, stereo: &Arc<StereoFrame>) -> Result<Option<SolveReport>> {
        let config = self.config;
        let rig = self.rig;
        let frame = cues.frame;
        let regressed = regressed_box(cues, &rig, config.regress_source).unwrap_or(cues.initial_box);
        let dims = regressed.dimensions;
        let track = &mut self.tracks[idx];
        track.hits += 1;
        track.misses = 0;
        track.last_boxes = cues.paired_boxes;

        let emit = |track: &mut Track, state: ObjectState, converged: bool, cost: f64| {
            track.history.push(TrackBox { frame, track_id: track.id, bbox: Box3D::new(state, dims), converged, cost });
        };
        let reanchor = |track: &mut Track, state: ObjectState| {
            track.anchor = Some(Anchor { cues: strip_id(cues), stereo: stereo.clone(), state });
        };

        if config.regress_only() {
            emit(track, regressed.state, true, 0.0);
            reanchor(track, regressed.state);
            track.status = TrackStatus::Active;
            return Ok(None);
        }

        let current = FrameData::new(cues, Some(stereo), config.sample_budget);
        if config.terms.temporal == TemporalMode::None {
            let problem = ObjectProblem::single(rig, config.weights, config.terms.spatial, current);
            let (state, _, report) = solve_single_frame(&problem, regressed.state, &config.solver)?;
            let fallback = !report.converged;
            emit(track, if fallback { regressed.state } else { state }, !fallback, report.final_cost);
            if !fallback {
                reanchor(track, state);
            }
            track.status = TrackStatus::Active;
            return Ok(Some(report));
        }

        let anchor = track.anchor.take().expect("live track keeps an anchor");
        let previous = FrameData::new(&anchor.cues, Some(&anchor.stereo), config.sample_budget);
        let init = [anchor.state, regressed.state];
        let (states, neq, report) = match &track.prior {
            None => {
                let problem =
                    ObjectProblem::two_frame(rig, config.weights, config.terms, previous, current, config.match_threshold);
                solve_two_frame(&problem, init, &config.solver)?
            }
            Some(prior) => {
                let problem =
                    ObjectProblem::with_prior(rig, config.weights, config.terms, previous, current, config.match_threshold);
                solve_with_prior(&problem, prior, init, &config.solver)?
            }
        };
        let prior = if report.converged { marginalize(&neq, frame).ok() } else { None };
        match prior {
            Some(prior) => {
                if track.prior.is_none() {
                    // the first joint solve also refines the anchor frame's box
                    if let Some(entry) = track.history.iter_mut().rev().find(|b| b.frame == anchor.cues.frame) {
                        entry.bbox = Box3D::new(states[0], entry.bbox.dimensions);
                        entry.converged = true;
                        entry.cost = report.final_cost;
                    }
                }
                track.prior = Some(prior);
                emit(track, states[1], true, report.final_cost);
                reanchor(track, states[1]);
                track.status = TrackStatus::Active;
            }
            None => {
                emit(track, regressed.state, false, report.final_cost);
                track.anchor = Some(anchor);
                if track.status == TrackStatus::Lost {
                    track.status = if track.prior.is_some() { TrackStatus::Active } else { TrackStatus::Tentative };
                }
            }
        }
        Ok(Some(report))
    }
}

fn strip_id(cues: &DenseCueFrame) -> DenseCueFrame {
    DenseCueFrame { track_id: None, ..cues.clone() }
}
