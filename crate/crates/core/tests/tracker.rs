mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::*;
use st3d::evalmot::{evaluate, SimilaritySpec};
use st3d::geometry::wrap_angle;
use st3d::io::ground_truth_records;
use st3d::optim::{ProblemTerms, TemporalMode};
use st3d::pipeline::{anonymize, track_frames, track_scenario};
use st3d::scenesim::{render_frame, NoiseConfig, ObjectSpec, RenderConfig};
use st3d::tracker::{regressed_box, FrameInput, RegressSource, Tracker, TrackerConfig};
use st3d::Error;

fn from_initial_boxes() -> TrackerConfig {
    TrackerConfig { regress_source: RegressSource::InitialBox, ..Default::default() }
}

#[test]
fn two_frames_recover_ground_truth() {
    let s = scene(vec![car(1, [1.0, 0.9, 15.0], 0.4, [0.1, 0.0, 0.4])], 2, 3);
    let inputs = perturbed_inputs(&s, 0.5, 5f64.to_radians(), 11);
    let mut tracker = Tracker::new(s.rig, from_initial_boxes()).unwrap();
    tracker.step(inputs[0].clone()).unwrap();
    let out = tracker.step(inputs[1].clone()).unwrap();
    assert_eq!(out.boxes.len(), 1);
    let b = &out.boxes[0];
    assert!(b.converged);
    let gt = truth(&s, 1, 1);
    assert!((b.bbox.state.position - gt.position).norm() < 0.02, "{:?} vs {gt:?}", b.bbox.state);
    assert!(wrap_angle(b.bbox.state.yaw - gt.yaw).abs() < 0.5f64.to_radians());
    // the birth frame is refined by the first joint solve
    let first = &tracker.tracks()[0].history[0];
    assert!((first.bbox.state.position - truth(&s, 1, 0).position).norm() < 0.02);
}

#[test]
fn reappearing_object_gets_a_new_id() {
    let hidden = ObjectSpec { hidden: vec![3, 4], ..car(1, [0.0, 0.9, 14.0], 0.2, [0.05, 0.0, 0.2]) };
    let s = scene(vec![hidden], 8, 2);
    let run = track_scenario(&s, &NoiseConfig::zero(), &RenderConfig::default(), TrackerConfig::default()).unwrap();
    let ids_at = |f: usize| -> Vec<u64> { run.trajectories.iter().filter(|r| r.frame == f).map(|r| r.track_id).collect() };
    assert_eq!(ids_at(2), vec![1]);
    assert!(ids_at(3).is_empty() && ids_at(4).is_empty());
    assert_eq!(ids_at(5), vec![2]);
    let gt = ground_truth_records(&s);
    let r = evaluate(&gt, &run.trajectories, &SimilaritySpec::distance(1.0)).unwrap();
    assert_eq!(r.ids, 1);
}

#[test]
fn occluded_frame_keeps_the_track() {
    // car 2 is fully hidden behind car 1 in frame 5 only
    let s = crossing_scene(6);
    let (_, cues) = render_clean(&s, 5);
    assert!(cues.iter().all(|c| c.track_id != Some(2)));
    let run = track_scenario(&s, &NoiseConfig::zero(), &RenderConfig::default(), TrackerConfig::default()).unwrap();
    let near = |f: usize| {
        let gt = truth(&s, 2, f).position;
        run.trajectories.iter().find(|r| r.frame == f && (r.to_box().state.position - gt).norm() < 0.1).map(|r| r.track_id)
    };
    let before = near(4).expect("tracked before the occlusion");
    assert_eq!(near(5), None);
    assert_eq!(near(6), Some(before));
    assert_eq!(near(9), Some(before));
}

#[test]
fn crossing_objects_keep_their_ids() {
    let s = crossing_scene(6);
    let noise = NoiseConfig { seed: 4, ..Default::default() };
    let run = track_scenario(&s, &noise, &RenderConfig::default(), TrackerConfig::default()).unwrap();
    let r = evaluate(&ground_truth_records(&s), &run.trajectories, &SimilaritySpec::distance(1.0)).unwrap();
    assert_eq!(r.ids, 0);
    assert!(r.mota.unwrap() > 80.0, "{r:?}");
}

#[test]
fn tracking_is_deterministic() {
    let s = occlusion_scene(8);
    let noise = NoiseConfig { seed: 5, ..Default::default() };
    let a = track_scenario(&s, &noise, &RenderConfig::default(), TrackerConfig::default()).unwrap();
    let b = track_scenario(&s, &noise, &RenderConfig::default(), TrackerConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regress_mode_outputs_regressed_boxes() {
    let s = crossing_scene(1);
    let noise = NoiseConfig { seed: 2, ..Default::default() };
    let config = TrackerConfig { terms: ProblemTerms { spatial: false, temporal: TemporalMode::None }, ..Default::default() };
    let run = track_scenario(&s, &noise, &RenderConfig::default(), config).unwrap();
    assert!(run.solve_log.is_empty());
    let mut expected = Vec::new();
    for f in 0..s.frames {
        let (_, cues) = render_frame(&s, f, &noise, &RenderConfig::default()).unwrap();
        expected.extend(cues.iter().map(|c| regressed_box(c, &s.rig, RegressSource::Cues).unwrap()));
    }
    let mut got: Vec<_> = run.trajectories.iter().map(|r| r.to_box()).collect();
    let key = |b: &st3d::Box3D| (b.state.position.x.to_bits(), b.state.position.z.to_bits());
    got.sort_by_key(key);
    expected.sort_by_key(key);
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert!((g.state.position - e.state.position).norm() < 1e-12);
        assert!((g.state.yaw - e.state.yaw).abs() < 1e-12);
    }
}

#[test]
fn converged_frames_carry_the_solution() {
    let s = truncation_scene(3);
    let run = track_scenario(&s, &NoiseConfig { seed: 1, ..Default::default() }, &RenderConfig::default(), TrackerConfig::default())
        .unwrap();
    assert!(!run.solve_log.is_empty());
    for log in run.solve_log.iter().filter(|l| l.report.converged) {
        let rec = run.trajectories.iter().find(|r| r.frame == log.frame && r.track_id == log.track_id).unwrap();
        let solved = log.report.states.last().unwrap();
        assert!(rec.converged);
        assert!((rec.to_box().state.position - solved.position).norm() < 1e-12);
    }
}

#[test]
fn ids_are_unique_and_histories_ordered() {
    let s = occlusion_scene(2);
    let inputs: Vec<FrameInput> = (0..s.frames)
        .map(|f| {
            let (stereo, cues) = render_frame(&s, f, &NoiseConfig { seed: 3, ..Default::default() }, &RenderConfig::default()).unwrap();
            FrameInput { frame: f, stereo: Arc::new(stereo), detections: anonymize(cues) }
        })
        .collect();
    let mut tracker = Tracker::new(s.rig, TrackerConfig::default()).unwrap();
    for input in inputs.iter().cloned() {
        tracker.step(input).unwrap();
    }
    let ids: BTreeSet<u64> = tracker.tracks().iter().map(|t| t.id).collect();
    assert_eq!(ids.len(), tracker.tracks().len());
    for t in tracker.tracks() {
        assert!(t.history.windows(2).all(|w| w[0].frame < w[1].frame));
    }
    // replaying an old frame is a contract violation
    assert!(matches!(tracker.step(inputs[3].clone()), Err(Error::Contract(_))));
    let again = track_frames(s.rig, TrackerConfig::default(), inputs.into_iter().map(Ok)).unwrap();
    assert!(!again.trajectories.is_empty());
}

#[test]
fn invalid_config_is_rejected() {
    let bad = TrackerConfig { iou_threshold: 0.0, ..Default::default() };
    assert!(matches!(Tracker::new(Default::default(), bad), Err(Error::InvalidConfig(_))));
    let bad = TrackerConfig { max_misses: 0, ..Default::default() };
    assert!(Tracker::new(Default::default(), bad).is_err());
}
