//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use st3d::io::{ground_truth_records, TrajectoryRecord};
use st3d::scenesim::{generate_scenario, render_frame, CameraSpec, NoiseConfig, ObjectSpec, RenderConfig, Scenario, ScenarioSpec};
use st3d::{DenseCueFrame, StereoFrame};

/// One car approaching the camera over three frames.
pub fn single_car(points_per_face: usize) -> Scenario {
    let spec = ScenarioSpec {
        version: 1,
        frames: 3,
        dt: 0.1,
        camera: CameraSpec::default(),
        objects: vec![ObjectSpec {
            id: 1,
            dimensions: [1.8, 1.6, 4.5],
            position: [0.5, 0.9, 12.0],
            yaw: 0.6,
            velocity: [0.05, 0.0, 0.3],
            yaw_rate: 0.0,
            first_frame: 0,
            last_frame: None,
            hidden: vec![],
        }],
        random: None,
        points_per_face,
    };
    generate_scenario(&spec, 5).expect("valid scenario")
}

pub fn rendered(s: &Scenario) -> Vec<(Arc<StereoFrame>, DenseCueFrame)> {
    let noise = NoiseConfig { seed: 3, ..Default::default() };
    (0..s.frames)
        .map(|f| {
            let (stereo, cues) = render_frame(s, f, &noise, &RenderConfig::default()).expect("frame renders");
            (Arc::new(stereo), cues.into_iter().next().expect("car visible"))
        })
        .collect()
}

pub fn random_ground_truth(frames: usize, objects: usize, seed: u64) -> Vec<TrajectoryRecord> {
    let s = generate_scenario(&ScenarioSpec::default_random(frames, objects), seed).expect("valid scenario");
    ground_truth_records(&s)
}
