//! End-to-end runs: render a scenario, feed the tracker, collect trajectories.

use std::sync::Arc;

use crate::cues::DenseCueFrame;
use crate::error::Result;
use crate::geometry::StereoRig;
use crate::io::{SolveLogRecord, TrajectoryRecord};
use crate::scenesim::{render_frame, NoiseConfig, RenderConfig, Scenario};
use crate::tracker::{FrameInput, Tracker, TrackerConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingRun {
    /// Final trajectories of all tracks, ordered by frame then track id.
    pub trajectories: Vec<TrajectoryRecord>,
    pub solve_log: Vec<SolveLogRecord>,
}

impl TrackingRun {
    /// Fraction of solves that converged; 1 when nothing was solved.
    pub fn convergence_rate(&self) -> f64 {
        if self.solve_log.is_empty() {
            return 1.0;
        }
        self.solve_log.iter().filter(|r| r.report.converged).count() as f64 / self.solve_log.len() as f64
    }
}

/// Detections as the tracker sees them: ground-truth ids removed.
pub fn anonymize(cues: Vec<DenseCueFrame>) -> Vec<DenseCueFrame> {
    cues.into_iter().map(|c| DenseCueFrame { track_id: None, ..c }).collect()
}

/// Runs the tracker over a stream of frames.
pub fn track_frames(
    rig: StereoRig,
    config: TrackerConfig,
    frames: impl IntoIterator<Item = Result<FrameInput>>,
) -> Result<TrackingRun> {
    let mut tracker = Tracker::new(rig, config)?;
    let mut solve_log = Vec::new();
    for input in frames {
        let out = tracker.step(input?)?;
        solve_log.extend(out.reports.into_iter().map(|(track_id, report)| SolveLogRecord { frame: out.frame, track_id, report }));
    }
    let mut trajectories: Vec<TrajectoryRecord> = tracker
        .tracks()
        .iter()
        .flat_map(|t| &t.history)
        .map(|b| TrajectoryRecord::from_box(b.frame, b.track_id, &b.bbox, b.converged, b.cost))
        .collect();
    trajectories.sort_by_key(|r| (r.frame, r.track_id));
    Ok(TrackingRun { trajectories, solve_log })
}

/// Renders every frame of `scenario` and tracks the detections.
pub fn track_scenario(
    scenario: &Scenario,
    noise: &NoiseConfig,
    render: &RenderConfig,
    config: TrackerConfig,
) -> Result<TrackingRun> {
    let frames = (0..scenario.frames).map(|f| {
        let (stereo, cues) = render_frame(scenario, f, noise, render)?;
        Ok(FrameInput { frame: f, stereo: Arc::new(stereo), detections: anonymize(cues) })
    });
    track_frames(scenario.rig, config, frames)
}
