//! Residual blocks and their analytic Jacobians.
//!
//! Two-frame blocks use the column layout `[x_prev, x_cur]`, each state being
//! `[p_x, p_y, p_z, yaw]`. Single-frame blocks carry four columns and name the
//! slot they belong to.

use nalgebra::Matrix2x3;
use serde::{Deserialize, Serialize};

use super::OptimizerWeights;
use crate::correspond::{CorrespondenceSet, PixelSampleSet};
use crate::cues::{DenseCueFrame, StereoFrame};
use crate::geometry::{
    back_project_unchecked, project_unchecked, wrap_angle, yaw_rotation_derivative, CameraIntrinsics, ObjectState,
    StereoRig, Vec2, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Spatial,
    Temporal,
    Coord,
    Pose,
    /// Anything else, e.g. synthetic linear residuals.
    Other,
}

/// Where a block's Jacobian columns land in the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    /// Four columns for the state in the given slot.
    Single(usize),
    /// Eight columns, `[slot 0, slot 1]`.
    Pair,
}

impl Placement {
    pub fn cols(&self) -> usize {
        match self {
            Placement::Single(_) => 4,
            Placement::Pair => 8,
        }
    }

    /// State-vector index of local column `c`.
    pub fn column(&self, c: usize) -> usize {
        match self {
            Placement::Single(slot) => slot * 4 + c,
            Placement::Pair => c,
        }
    }
}

/// Residuals grouped into items of `dim` components. The robust norm applies to
/// each item as a whole.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub term: Term,
    pub placement: Placement,
    pub dim: usize,
    pub values: Vec<f64>,
    /// Row-major, `values.len()` rows by `placement.cols()` columns.
    pub jacobian: Vec<f64>,
    /// One weight per item.
    pub item_weights: Vec<f64>,
    pub huber_delta: Option<f64>,
    /// Items skipped because they left the image or went behind the camera.
    pub dropped: usize,
}

impl ResidualBlock {
    pub fn new(term: Term, placement: Placement, dim: usize, huber_delta: Option<f64>) -> Self {
        Self {
            term,
            placement,
            dim,
            values: Vec::new(),
            jacobian: Vec::new(),
            item_weights: Vec::new(),
            huber_delta,
            dropped: 0,
        }
    }

    pub fn items(&self) -> usize {
        self.item_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_weights.is_empty()
    }

    pub fn push_item(&mut self, weight: f64, values: &[f64], jacobian_rows: &[f64]) {
        debug_assert_eq!(values.len(), self.dim);
        debug_assert_eq!(jacobian_rows.len(), self.dim * self.placement.cols());
        self.item_weights.push(weight);
        self.values.extend_from_slice(values);
        self.jacobian.extend_from_slice(jacobian_rows);
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jacobian_row(&self, row: usize) -> &[f64] {
        let c = self.placement.cols();
        &self.jacobian[row * c..(row + 1) * c]
    }

    /// Robust cost and IRLS weight of item `i`.
    pub fn item_cost_and_weight(&self, i: usize) -> (f64, f64) {
        let s = self.item(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let (rho, w) = huber(s, self.huber_delta);
        (self.item_weights[i] * rho, self.item_weights[i] * w)
    }

    pub fn cost(&self) -> f64 {
        (0..self.items()).map(|i| self.item_cost_and_weight(i).0).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.items() as f64).sqrt()
    }

    /// Re-targets an eight-column block to the current slot alone, dropping
    /// the previous-state columns (used when the previous state is frozen).
    pub fn current_only(&self) -> Self {
        match self.placement {
            Placement::Single(_) => self.clone(),
            Placement::Pair => {
                let jacobian = self.jacobian.chunks(8).flat_map(|row| row[4..8].to_vec()).collect();
                Self { placement: Placement::Single(0), jacobian, ..self.clone() }
            }
        }
    }
}

/// Huber loss `rho(s)` and its IRLS weight `rho'(s)/s`; plain least squares
/// when `delta` is `None`.
pub fn huber(s: f64, delta: Option<f64>) -> (f64, f64) {
    match delta {
        Some(d) if s > d => (d * (s - 0.5 * d), d / s),
        _ => (0.5 * s * s, 1.0),
    }
}

fn projection_jacobian(q: &Vec3, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / q.z;
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * q.x * iz * iz, 0.0, k.fy * iz, -k.fy * q.y * iz * iz)
}

/// Stereo photometric residuals `I_l(u) - I_r(u_r)` with
/// `u_r = pi(pi^-1(u, delta + p_z) + p_s)`. Only the `p_z` column is non-zero.
pub fn spatial_residuals(
    state: &ObjectState,
    cues: &DenseCueFrame,
    samples: &PixelSampleSet,
    stereo: &StereoFrame,
    rig: &StereoRig,
    weights: &OptimizerWeights,
    slot: usize,
) -> ResidualBlock {
    let k = &rig.intrinsics;
    let offset = rig.stereo_offset();
    let mut block = ResidualBlock::new(Term::Spatial, Placement::Single(slot), 1, Some(weights.huber_delta_photometric));
    for &i in &samples.indices {
        let u = cues.pixel(i);
        let depth = cues.local_depth[i] + state.position.z;
        if depth <= 0.0 {
            block.dropped += 1;
            continue;
        }
        let Some(left) = stereo.left.bilinear(&u) else {
            block.dropped += 1;
            continue;
        };
        let p = back_project_unchecked(&u, depth, k);
        let q = p + offset;
        if q.z <= 0.0 {
            block.dropped += 1;
            continue;
        }
        let ur = project_unchecked(&q, k);
        let Some((right, grad)) = stereo.right.bilinear_with_gradient(&ur) else {
            block.dropped += 1;
            continue;
        };
        let dur_dz = projection_jacobian(&q, k) * (p / depth);
        let dr_dz = -(grad[0] * dur_dz.x + grad[1] * dur_dz.y);
        block.push_item(weights.w_photometric, &[left - right], &[0.0, 0.0, dr_dz, 0.0]);
    }
    block
}

/// Position of the current pixel `u` (local depth `delta`) in the previous
/// image under the two states, with its 2x8 Jacobian in `[prev, cur]` layout.
/// `None` when either back-projection or the warped point is behind the camera.
pub fn warp_to_previous(
    u: &Vec2,
    delta: f64,
    cur: &ObjectState,
    prev: &ObjectState,
    k: &CameraIntrinsics,
) -> Option<(Vec2, [[f64; 8]; 2])> {
    let depth = delta + cur.position.z;
    if depth <= 0.0 {
        return None;
    }
    let p = back_project_unchecked(u, depth, k);
    let dp_dd = p / depth;
    let rc_t = cur.rotation().transpose();
    let rp = prev.rotation();
    let diff = p - cur.position;
    let body = rc_t * diff;
    let q = rp * body + prev.position;
    if q.z <= 1e-6 {
        return None;
    }
    let up = project_unchecked(&q, k);
    let jpi = projection_jacobian(&q, k);

    let mut jac = [[0.0; 8]; 2];
    let dq_dthp = yaw_rotation_derivative(prev.yaw) * body;
    let rel = rp * rc_t;
    let dq_dthc = rp * yaw_rotation_derivative(cur.yaw).transpose() * diff;
    for c in 0..3 {
        // d q / d p_prev = I
        let mut e = Vec3::zeros();
        e[c] = 1.0;
        let d_prev = jpi * e;
        // d q / d p_cur = R_p R_c^T (-e_c + [c == z] * dp/dd)
        let mut dd = -e;
        if c == 2 {
            dd += dp_dd;
        }
        let d_cur = jpi * (rel * dd);
        for r in 0..2 {
            jac[r][c] = d_prev[r];
            jac[r][4 + c] = d_cur[r];
        }
    }
    let d_thp = jpi * dq_dthp;
    let d_thc = jpi * dq_dthc;
    for r in 0..2 {
        jac[r][3] = d_thp[r];
        jac[r][7] = d_thc[r];
    }
    Some((up, jac))
}

/// Temporal reprojection residuals `u_p - u_prev` over matched pixels.
pub fn temporal_residuals(
    state_cur: &ObjectState,
    state_prev: &ObjectState,
    matches: &CorrespondenceSet,
    cues_cur: &DenseCueFrame,
    cues_prev: &DenseCueFrame,
    rig: &StereoRig,
    weights: &OptimizerWeights,
) -> ResidualBlock {
    let k = &rig.intrinsics;
    let mut block = ResidualBlock::new(Term::Temporal, Placement::Pair, 2, Some(weights.huber_delta_reprojection));
    for &(i, j) in &matches.pairs {
        let Some((up, jac)) = warp_to_previous(&cues_cur.pixel(i), cues_cur.local_depth[i], state_cur, state_prev, k)
        else {
            block.dropped += 1;
            continue;
        };
        let target = cues_prev.pixel(j);
        let r = up - target;
        let rows: Vec<f64> = jac.iter().flatten().copied().collect();
        block.push_item(weights.w_reprojection, &[r.x, r.y], &rows);
    }
    block
}

/// Local-coordinate alignment: the previous frame's coordinate map sampled at
/// the warped pixel minus the current pixel's coordinates.
pub fn coord_residuals(
    state_cur: &ObjectState,
    state_prev: &ObjectState,
    samples: &PixelSampleSet,
    cues_cur: &DenseCueFrame,
    cues_prev: &DenseCueFrame,
    rig: &StereoRig,
    weights: &OptimizerWeights,
) -> ResidualBlock {
    let k = &rig.intrinsics;
    let mut block = ResidualBlock::new(Term::Coord, Placement::Pair, 3, Some(weights.huber_delta_coords));
    let Some(map) = cues_prev.coord_map.as_ref() else {
        block.dropped = samples.len();
        return block;
    };
    for &i in &samples.indices {
        let Some((up, jac)) = warp_to_previous(&cues_cur.pixel(i), cues_cur.local_depth[i], state_cur, state_prev, k)
        else {
            block.dropped += 1;
            continue;
        };
        let Some((c_prev, grad)) = map.sample(&up) else {
            block.dropped += 1;
            continue;
        };
        let r = c_prev - cues_cur.coord(i);
        let mut rows = [0.0; 24];
        for a in 0..3 {
            for col in 0..8 {
                rows[a * 8 + col] = grad[0][a] * jac[0][col] + grad[1][a] * jac[1][col];
            }
        }
        block.push_item(weights.w_coords, &[r.x, r.y, r.z], &rows);
    }
    block
}

/// Per-frame pose residuals: centroid reprojection (2) and the observation
/// angle relation (1), unrobustified.
pub fn pose_residuals(
    state: &ObjectState,
    cues: &DenseCueFrame,
    rig: &StereoRig,
    weights: &OptimizerWeights,
    slot: usize,
) -> ResidualBlock {
    let k = &rig.intrinsics;
    let mut block = ResidualBlock::new(Term::Pose, Placement::Single(slot), 1, None);
    let p = state.position;
    if p.z <= 0.0 {
        block.dropped = 3;
        return block;
    }
    let c = project_unchecked(&p, k) - cues.centroid();
    let jpi = projection_jacobian(&p, k);
    for r in 0..2 {
        block.push_item(weights.w_pose_projection, &[c[r]], &[jpi[(r, 0)], jpi[(r, 1)], jpi[(r, 2)], 0.0]);
    }
    let n2 = p.x * p.x + p.z * p.z;
    let angle = wrap_angle(state.yaw - cues.observation_angle + p.x.atan2(p.z));
    block.push_item(weights.w_pose_angle, &[angle], &[p.z / n2, 0.0, -p.x / n2, 1.0]);
    block
}

/// Warped pixel of [`warp_to_previous`] without derivatives.
pub fn warped_pixel(u: &Vec2, delta: f64, cur: &ObjectState, prev: &ObjectState, k: &CameraIntrinsics) -> Option<Vec2> {
    warp_to_previous(u, delta, cur, prev, k).map(|(p, _)| p)
}
