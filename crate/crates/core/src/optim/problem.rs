use serde::{Deserialize, Serialize};

use super::residuals::{coord_residuals, pose_residuals, spatial_residuals, temporal_residuals, ResidualBlock};
use super::solver::WindowProblem;
use super::OptimizerWeights;
use crate::correspond::{match_coordinates, sample_pixels, CorrespondenceSet, PixelSampleSet};
use crate::cues::{DenseCueFrame, StereoFrame};
use crate::geometry::{ObjectState, StereoRig};

/// How consecutive frames are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    /// Reprojection of matched pixels.
    #[default]
    Repro,
    /// Dense local-coordinate alignment.
    Coord,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemTerms {
    pub spatial: bool,
    pub temporal: TemporalMode,
}

impl Default for ProblemTerms {
    fn default() -> Self {
        Self { spatial: true, temporal: TemporalMode::Repro }
    }
}

/// One frame's observations of an object, with the sampled pixel subset.
#[derive(Debug, Clone)]
pub struct FrameData<'a> {
    pub cues: &'a DenseCueFrame,
    pub stereo: Option<&'a StereoFrame>,
    pub samples: PixelSampleSet,
}

impl<'a> FrameData<'a> {
    /// Samples up to `budget` pixels by left-image gradient; without images
    /// every pixel is used.
    pub fn new(cues: &'a DenseCueFrame, stereo: Option<&'a StereoFrame>, budget: usize) -> Self {
        let samples = match stereo {
            Some(s) => sample_pixels(cues, &s.left, budget),
            None => PixelSampleSet::all(cues),
        };
        Self { cues, stereo, samples }
    }
}

/// Residual model of one object over one or two frames.
#[derive(Debug, Clone)]
pub struct ObjectProblem<'a> {
    pub rig: StereoRig,
    pub weights: OptimizerWeights,
    pub terms: ProblemTerms,
    pub previous: Option<FrameData<'a>>,
    pub current: FrameData<'a>,
    /// Current-to-previous matches, restricted to the current samples.
    pub matches: CorrespondenceSet,
    /// Whether spatial and pose residuals of the previous state are included.
    pub previous_frame_terms: bool,
}

impl<'a> ObjectProblem<'a> {
    pub fn single(rig: StereoRig, weights: OptimizerWeights, spatial: bool, current: FrameData<'a>) -> Self {
        Self {
            rig,
            weights,
            terms: ProblemTerms { spatial, temporal: TemporalMode::None },
            previous: None,
            current,
            matches: CorrespondenceSet::default(),
            previous_frame_terms: false,
        }
    }

    /// Both frames' own residuals plus the temporal link (first solve of a track).
    pub fn two_frame(
        rig: StereoRig,
        weights: OptimizerWeights,
        terms: ProblemTerms,
        previous: FrameData<'a>,
        current: FrameData<'a>,
        match_threshold: f64,
    ) -> Self {
        let mut p = Self::with_prior(rig, weights, terms, previous, current, match_threshold);
        p.previous_frame_terms = true;
        p
    }

    /// Current-frame residuals plus the temporal link; the previous state is
    /// expected to be constrained by a marginal prior.
    pub fn with_prior(
        rig: StereoRig,
        weights: OptimizerWeights,
        terms: ProblemTerms,
        previous: FrameData<'a>,
        current: FrameData<'a>,
        match_threshold: f64,
    ) -> Self {
        let matches = if terms.temporal == TemporalMode::Repro {
            match_coordinates(current.cues, previous.cues, match_threshold).restricted_to(&current.samples)
        } else {
            CorrespondenceSet::default()
        };
        Self { rig, weights, terms, previous: Some(previous), current, matches, previous_frame_terms: false }
    }

    fn frame_blocks(&self, frame: &FrameData, state: &ObjectState, slot: usize, out: &mut Vec<ResidualBlock>) {
        if self.terms.spatial {
            if let Some(stereo) = frame.stereo {
                out.push(spatial_residuals(state, frame.cues, &frame.samples, stereo, &self.rig, &self.weights, slot));
            }
        }
        out.push(pose_residuals(state, frame.cues, &self.rig, &self.weights, slot));
    }
}

impl WindowProblem for ObjectProblem<'_> {
    fn num_states(&self) -> usize {
        if self.previous.is_some() {
            2
        } else {
            1
        }
    }

    fn blocks(&self, states: &[ObjectState]) -> Vec<ResidualBlock> {
        let mut out = Vec::new();
        let Some(previous) = &self.previous else {
            self.frame_blocks(&self.current, &states[0], 0, &mut out);
            return out;
        };
        let (prev, cur) = (&states[0], &states[1]);
        if self.previous_frame_terms {
            self.frame_blocks(previous, prev, 0, &mut out);
        }
        self.frame_blocks(&self.current, cur, 1, &mut out);
        match self.terms.temporal {
            TemporalMode::Repro => out.push(temporal_residuals(
                cur,
                prev,
                &self.matches,
                self.current.cues,
                previous.cues,
                &self.rig,
                &self.weights,
            )),
            TemporalMode::Coord => out.push(coord_residuals(
                cur,
                prev,
                &self.current.samples,
                self.current.cues,
                previous.cues,
                &self.rig,
                &self.weights,
            )),
            TemporalMode::None => {}
        }
        out
    }
}
