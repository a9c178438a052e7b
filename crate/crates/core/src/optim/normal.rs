//! Normal-equation assembly and Schur-complement marginalization.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use super::residuals::ResidualBlock;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ObjectState};

/// `H = sum J^T W J`, `b = sum J^T W r` at the linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquation {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub linearization: Vec<ObjectState>,
}

impl NormalEquation {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn stacked_state(&self) -> DVector<f64> {
        stack(&self.linearization)
    }
}

pub fn stack(states: &[ObjectState]) -> DVector<f64> {
    DVector::from_iterator(states.len() * 4, states.iter().flat_map(|s| s.as_array()))
}

/// Builds the Gauss-Newton system of `blocks` around `linearization`, with
/// the Huber IRLS weights evaluated at the blocks' residuals.
pub fn assemble_normal_equation(blocks: &[ResidualBlock], linearization: &[ObjectState]) -> Result<NormalEquation> {
    let n = linearization.len() * 4;
    let mut h = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for block in blocks {
        let cols = block.placement.cols();
        let max_col = (0..cols).map(|c| block.placement.column(c)).max().unwrap_or(0);
        if max_col >= n {
            return Err(Error::Contract(format!(
                "block {:?} addresses column {max_col} of a {n}-dimensional state",
                block.term
            )));
        }
        if block.values.len() != block.items() * block.dim || block.jacobian.len() != block.values.len() * cols {
            return Err(Error::Contract(format!("malformed {:?} block", block.term)));
        }
        let map: Vec<usize> = (0..cols).map(|c| block.placement.column(c)).collect();
        for item in 0..block.items() {
            let (_, w) = block.item_cost_and_weight(item);
            for d in 0..block.dim {
                let row = item * block.dim + d;
                let j = block.jacobian_row(row);
                let r = block.values[row];
                for a in 0..cols {
                    if j[a] == 0.0 {
                        continue;
                    }
                    b[map[a]] += w * j[a] * r;
                    for c in a..cols {
                        h[(map[a], map[c])] += w * j[a] * j[c];
                    }
                }
            }
        }
    }
    // placements map columns monotonically, so only the upper triangle was filled
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    Ok(NormalEquation { h, b, linearization: linearization.to_vec() })
}

/// Information-form Gaussian on one state, `H x = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPrior {
    pub h: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub anchor_frame: usize,
    /// Set when the eliminated block needed diagonal damping to factor.
    pub damped: bool,
}

impl MarginalPrior {
    pub fn zero(anchor_frame: usize) -> Self {
        Self { h: Matrix4::zeros(), b: Vector4::zeros(), anchor_frame, damped: false }
    }

    /// Minimum-norm solution of `H mu = b` (pseudo-inverse for rank-deficient `H`).
    pub fn mean(&self) -> Vector4<f64> {
        let eig = SymmetricEigen::new(self.h);
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = max * 1e-12;
        let mut mu = Vector4::zeros();
        for i in 0..4 {
            let l = eig.eigenvalues[i];
            if l.abs() > tol && l.abs() > 0.0 {
                let v = eig.eigenvectors.column(i);
                mu += v * (v.dot(&self.b) / l);
            }
        }
        mu
    }

    /// `(x - mu)` with the yaw component wrapped.
    pub fn deviation(&self, state: &ObjectState, mean: &Vector4<f64>) -> Vector4<f64> {
        let x = Vector4::from(state.as_array());
        let mut d = x - mean;
        d[3] = wrap_angle(d[3]);
        d
    }

    /// `1/2 (x - mu)^T H (x - mu)`.
    pub fn cost(&self, state: &ObjectState) -> f64 {
        let d = self.deviation(state, &self.mean());
        0.5 * d.dot(&(self.h * d))
    }
}

/// Eliminates the older (slot 0) state of a two-state system via the Schur
/// complement, returning the prior on the newer state.
pub fn marginalize(neq: &NormalEquation, anchor_frame: usize) -> Result<MarginalPrior> {
    if neq.dim() != 8 {
        return Err(Error::Contract(format!("marginalization needs an 8-dim system, got {}", neq.dim())));
    }
    let b_prime = &neq.h * neq.stacked_state() - &neq.b;
    let h11: Matrix4<f64> = neq.h.fixed_view::<4, 4>(0, 0).into_owned();
    let h12: Matrix4<f64> = neq.h.fixed_view::<4, 4>(0, 4).into_owned();
    let h21: Matrix4<f64> = neq.h.fixed_view::<4, 4>(4, 0).into_owned();
    let h22: Matrix4<f64> = neq.h.fixed_view::<4, 4>(4, 4).into_owned();
    let b1: Vector4<f64> = b_prime.fixed_rows::<4>(0).into_owned();
    let b2: Vector4<f64> = b_prime.fixed_rows::<4>(4).into_owned();

    let (h11_inv, damped) = invert_spd(&h11)?;
    let h_tilde = h22 - h21 * h11_inv * h12;
    let h_tilde = (h_tilde + h_tilde.transpose()) * 0.5;
    let b_tilde = b2 - h21 * h11_inv * b1;
    Ok(MarginalPrior { h: h_tilde, b: b_tilde, anchor_frame, damped })
}

/// Cholesky inverse of a symmetric block, adding `lambda I` with
/// `lambda = 1e-8 trace / 4` when it is singular or badly conditioned.
fn invert_spd(m: &Matrix4<f64>) -> Result<(Matrix4<f64>, bool)> {
    let eig = SymmetricEigen::new(*m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let well_conditioned = max > 0.0 && min > max * 1e-12;
    if well_conditioned {
        if let Some(ch) = m.cholesky() {
            return Ok((ch.inverse(), false));
        }
    }
    let lambda = 1e-8 * m.trace() / 4.0;
    if !(lambda > 0.0) {
        return Err(Error::Contract("marginalized block has no information".into()));
    }
    let damped = m + Matrix4::identity() * lambda;
    damped
        .cholesky()
        .map(|ch| (ch.inverse(), true))
        .ok_or_else(|| Error::Contract("marginalized block is indefinite after damping".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::residuals::{Placement, Term};
    use rand::{Rng, SeedableRng};

    fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn states(v: &DVector<f64>) -> Vec<ObjectState> {
        (0..v.len() / 4).map(|i| ObjectState { position: v.fixed_rows::<3>(4 * i).into_owned(), yaw: v[4 * i + 3] }).collect()
    }

    #[test]
    fn identity_block_assembles_to_identity() {
        let mut block = ResidualBlock::new(Term::Other, Placement::Single(0), 1, None);
        let r0 = [0.3, -1.2, 2.0, 0.7];
        for (i, r) in r0.iter().enumerate() {
            let mut row = [0.0; 4];
            row[i] = 1.0;
            block.push_item(1.0, &[*r], &row);
        }
        let neq = assemble_normal_equation(&[block], &[ObjectState::new(0.0, 0.0, 1.0, 0.0)]).unwrap();
        assert_eq!(neq.h, DMatrix::identity(4, 4));
        assert_eq!(neq.b.as_slice(), &r0);
    }

    #[test]
    fn disjoint_blocks_give_block_diagonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut blocks = Vec::new();
        for slot in 0..2 {
            let mut b = ResidualBlock::new(Term::Other, Placement::Single(slot), 2, None);
            for _ in 0..5 {
                let row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                b.push_item(1.5, &[0.1, 0.2], &row);
            }
            blocks.push(b);
        }
        let lin = vec![ObjectState::new(0.0, 0.0, 1.0, 0.0); 2];
        let neq = assemble_normal_equation(&blocks, &lin).unwrap();
        assert_eq!(neq.h.view((0, 4), (4, 4)).amax(), 0.0);
        assert_eq!(neq.h.view((4, 0), (4, 4)).amax(), 0.0);
    }

    #[test]
    fn assembly_matches_dense_stacked_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut blocks = Vec::new();
        for (placement, dim, delta) in [
            (Placement::Pair, 2, Some(0.5)),
            (Placement::Single(1), 1, None),
            (Placement::Single(0), 3, Some(0.2)),
            (Placement::Pair, 1, None),
        ] {
            let mut b = ResidualBlock::new(Term::Other, placement, dim, delta);
            for _ in 0..20 {
                let vals: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let rows: Vec<f64> = (0..dim * placement.cols()).map(|_| rng.random_range(-2.0..2.0)).collect();
                b.push_item(rng.random_range(0.1..3.0), &vals, &rows);
            }
            blocks.push(b);
        }
        let lin = vec![ObjectState::new(0.0, 0.0, 1.0, 0.0); 2];
        let neq = assemble_normal_equation(&blocks, &lin).unwrap();

        // dense oracle: stack all rows into J (m x 8), weights into W, residuals into r
        let rows: usize = blocks.iter().map(|b| b.values.len()).sum();
        let mut j = DMatrix::zeros(rows, 8);
        let mut w = DVector::zeros(rows);
        let mut r = DVector::zeros(rows);
        let mut at = 0;
        for b in &blocks {
            for item in 0..b.items() {
                let (_, wi) = b.item_cost_and_weight(item);
                for d in 0..b.dim {
                    let row = item * b.dim + d;
                    for c in 0..b.placement.cols() {
                        j[(at, b.placement.column(c))] = b.jacobian_row(row)[c];
                    }
                    w[at] = wi;
                    r[at] = b.values[row];
                    at += 1;
                }
            }
        }
        let wm = DMatrix::from_diagonal(&w);
        let h = j.transpose() * &wm * &j;
        let bb = j.transpose() * &wm * &r;
        assert!((&neq.h - h).amax() < 1e-12);
        assert!((&neq.b - bb).amax() < 1e-12);
        assert_eq!(neq.h, neq.h.transpose());
    }

    #[test]
    fn assembly_rejects_out_of_range_columns() {
        let mut b = ResidualBlock::new(Term::Other, Placement::Single(1), 1, None);
        b.push_item(1.0, &[0.0], &[1.0, 0.0, 0.0, 0.0]);
        assert!(assemble_normal_equation(&[b], &[ObjectState::new(0.0, 0.0, 1.0, 0.0)]).is_err());
    }

    #[test]
    fn decoupled_frames_marginalize_trivially() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut h = DMatrix::zeros(8, 8);
        h.view_mut((0, 0), (4, 4)).copy_from(&random_spd(&mut rng, 4));
        h.view_mut((4, 4), (4, 4)).copy_from(&random_spd(&mut rng, 4));
        let x = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let neq = NormalEquation { h: h.clone(), b: b.clone(), linearization: states(&x) };
        let prior = marginalize(&neq, 0).unwrap();
        let bp = &h * &x - &b;
        assert!((prior.h - h.fixed_view::<4, 4>(4, 4)).amax() < 1e-12);
        assert!((prior.b - bp.fixed_rows::<4>(4)).amax() < 1e-12);
        assert!(!prior.damped);
    }

    #[test]
    fn schur_solution_matches_full_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let h = random_spd(&mut rng, 8);
            let x = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            let neq = NormalEquation { h: h.clone(), b: b.clone(), linearization: states(&x) };
            let prior = marginalize(&neq, 0).unwrap();
            let full = h.clone().lu().solve(&(&h * &x - &b)).unwrap();
            let x2 = prior.h.lu().solve(&prior.b).unwrap();
            assert!((x2 - full.fixed_rows::<4>(4)).amax() < 1e-10);
            // prior information never exceeds joint information
            let gap = h.fixed_view::<4, 4>(4, 4) - prior.h;
            assert!(SymmetricEigen::new(gap).eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn singular_block_is_damped_or_rejected() {
        let mut h = DMatrix::zeros(8, 8);
        h[(0, 0)] = 1.0;
        h.view_mut((4, 4), (4, 4)).fill_with_identity();
        let neq = NormalEquation { h, b: DVector::zeros(8), linearization: vec![ObjectState::new(0.0, 0.0, 1.0, 0.0); 2] };
        let prior = marginalize(&neq, 3).unwrap();
        assert!(prior.damped);
        assert_eq!(prior.anchor_frame, 3);
        let none = NormalEquation { h: DMatrix::zeros(8, 8), ..neq.clone() };
        assert!(marginalize(&none, 0).is_err());
    }

    #[test]
    fn prior_mean_uses_pseudo_inverse() {
        let mut p = MarginalPrior::zero(0);
        p.h[(0, 0)] = 2.0;
        p.b[0] = 4.0;
        let mu = p.mean();
        assert!((mu - Vector4::new(2.0, 0.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(p.cost(&ObjectState::new(2.0, 5.0, 7.0, 0.3)), 0.0);
    }
}
