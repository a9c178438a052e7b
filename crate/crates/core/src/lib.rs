//! Stereo 3D multi-object tracking by joint spatial-temporal optimization.
//!
//! The crate bundles a Gauss-Newton optimizer over per-object yaw/position
//! states (stereo photometric, temporal reprojection or coordinate alignment,
//! and pose residuals) with per-frame Schur-complement marginalization, a
//! paired-box track manager, a synthetic stereo scene simulator that stands in
//! for learned dense predictions, and CLEAR-MOT evaluation in 3D.

pub mod correspond;
pub mod cues;
pub mod error;
pub mod evalmot;
pub mod geometry;
pub mod image;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scenesim;
pub mod tracker;

pub use cues::{CoordPatch, DenseCueFrame, PairedBoxes, StereoFrame};
pub use error::{Error, Result};
pub use geometry::{Box2D, Box3D, CameraIntrinsics, Dimensions, ObjectState, StereoRig};
