//! Joint spatial-temporal Gauss-Newton optimization of per-object states.

mod normal;
mod problem;
mod residuals;
mod solver;

pub use normal::{assemble_normal_equation, marginalize, stack, MarginalPrior, NormalEquation};
pub use problem::{FrameData, ObjectProblem, ProblemTerms, TemporalMode};
pub use residuals::{
    coord_residuals, huber, pose_residuals, spatial_residuals, temporal_residuals, warp_to_previous, warped_pixel,
    Placement, ResidualBlock, Term,
};
pub use solver::{
    solve_single_frame, solve_two_frame, solve_window, solve_with_prior, SolveReport, SolverConfig, TermCosts,
    WindowProblem,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Huber constant for 95% efficiency under Gaussian noise.
pub const HUBER_K: f64 = 1.345;

/// Term weights and robust-norm thresholds. Weights are inverse variances of
/// the corresponding residual noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerWeights {
    pub w_photometric: f64,
    pub w_reprojection: f64,
    pub w_coords: f64,
    pub w_pose_projection: f64,
    pub w_pose_angle: f64,
    /// intensity units
    pub huber_delta_photometric: f64,
    /// pixels
    pub huber_delta_reprojection: f64,
    /// meters
    pub huber_delta_coords: f64,
}

impl OptimizerWeights {
    /// Inverse-variance weights from per-term noise sigmas, with Huber
    /// thresholds at [`HUBER_K`] sigma.
    pub fn from_sigmas(photometric: f64, reprojection: f64, coords: f64, centroid: f64, angle: f64) -> Self {
        Self {
            w_photometric: photometric.powi(-2),
            w_reprojection: reprojection.powi(-2),
            w_coords: coords.powi(-2),
            w_pose_projection: centroid.powi(-2),
            w_pose_angle: angle.powi(-2),
            huber_delta_photometric: HUBER_K * photometric,
            huber_delta_reprojection: HUBER_K * reprojection,
            huber_delta_coords: HUBER_K * coords,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_photometric,
            self.w_reprojection,
            self.w_coords,
            self.w_pose_projection,
            self.w_pose_angle,
            self.huber_delta_photometric,
            self.huber_delta_reprojection,
            self.huber_delta_coords,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer weights and deltas must be positive: {self:?}")))
        }
    }
}

impl Default for OptimizerWeights {
    fn default() -> Self {
        Self::from_sigmas(0.02, 1.0, 0.05, 2.0, 0.05)
    }
}
