use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::normal::{assemble_normal_equation, MarginalPrior, NormalEquation};
use super::problem::ObjectProblem;
use super::residuals::{ResidualBlock, Term};
use crate::error::{Error, Result};
use crate::geometry::ObjectState;

/// A least-squares problem over one or more consecutive object states.
pub trait WindowProblem {
    fn num_states(&self) -> usize;

    /// Residual blocks with Jacobians, evaluated at `states`.
    fn blocks(&self, states: &[ObjectState]) -> Vec<ResidualBlock>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the state increment norm falls below this.
    pub eps_step: f64,
    /// Stop when the relative cost decrease falls below this.
    pub eps_cost: f64,
    /// Initial Levenberg factor, relative to the diagonal of H.
    pub initial_lambda: f64,
    pub max_lambda: f64,
    /// Fraction of dropped dense residuals above which a solve is low-confidence.
    pub low_confidence_drop_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            eps_step: 1e-6,
            eps_cost: 1e-8,
            initial_lambda: 1e-5,
            max_lambda: 1e8,
            low_confidence_drop_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermCosts {
    pub spatial: f64,
    pub temporal: f64,
    pub pose: f64,
    pub prior: f64,
    pub other: f64,
}

impl TermCosts {
    pub fn total(&self) -> f64 {
        self.spatial + self.temporal + self.pose + self.prior + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: TermCosts,
    pub spatial_used: usize,
    pub temporal_used: usize,
    pub dropped: usize,
    pub converged: bool,
    pub low_confidence: bool,
    pub final_step_norm: f64,
    /// Total cost after each accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub states: Vec<ObjectState>,
}

struct Evaluation {
    blocks: Vec<ResidualBlock>,
    costs: TermCosts,
}

fn evaluate<P: WindowProblem + ?Sized>(problem: &P, states: &[ObjectState], prior: Option<&PriorTerm>) -> Evaluation {
    let blocks = problem.blocks(states);
    let mut costs = TermCosts::default();
    for b in &blocks {
        let c = b.cost();
        match b.term {
            Term::Spatial => costs.spatial += c,
            Term::Temporal | Term::Coord => costs.temporal += c,
            Term::Pose => costs.pose += c,
            Term::Other => costs.other += c,
        }
    }
    if let Some(p) = prior {
        costs.prior = p.cost(&states[0]);
    }
    Evaluation { blocks, costs }
}

/// Prior with its mean precomputed.
struct PriorTerm<'a> {
    prior: &'a MarginalPrior,
    mean: nalgebra::Vector4<f64>,
}

impl PriorTerm<'_> {
    fn cost(&self, state: &ObjectState) -> f64 {
        let d = self.prior.deviation(state, &self.mean);
        0.5 * d.dot(&(self.prior.h * d))
    }
}

fn linearize(eval: &Evaluation, states: &[ObjectState], prior: Option<&PriorTerm>) -> Result<NormalEquation> {
    let mut neq = assemble_normal_equation(&eval.blocks, states)?;
    if let Some(p) = prior {
        let d = p.prior.deviation(&states[0], &p.mean);
        let g = p.prior.h * d;
        for r in 0..4 {
            neq.b[r] += g[r];
            for c in 0..4 {
                neq.h[(r, c)] += p.prior.h[(r, c)];
            }
        }
    }
    Ok(neq)
}

fn damped_step(neq: &NormalEquation, lambda: f64) -> Option<DVector<f64>> {
    let n = neq.dim();
    let max_diag = (0..n).map(|i| neq.h[(i, i)]).fold(0.0f64, f64::max);
    let floor = 1e-9 * max_diag.max(1.0);
    let mut a: DMatrix<f64> = neq.h.clone();
    for i in 0..n {
        a[(i, i)] += lambda * neq.h[(i, i)].max(floor);
    }
    let ch = a.cholesky()?;
    let dx = ch.solve(&(-&neq.b));
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

fn retract(states: &[ObjectState], dx: &DVector<f64>) -> Vec<ObjectState> {
    states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = s.position + dx.fixed_rows::<3>(4 * i);
            ObjectState::new(p.x, p.y, p.z, s.yaw + dx[4 * i + 3])
        })
        .collect()
}

/// Damped Gauss-Newton over all states of `problem`, optionally with a
/// marginal prior on the first state. Returns the final states, the undamped
/// normal equation at the final linearization point, and a report.
pub fn solve_window<P: WindowProblem + ?Sized>(
    problem: &P,
    init: &[ObjectState],
    prior: Option<&MarginalPrior>,
    config: &SolverConfig,
) -> Result<(Vec<ObjectState>, NormalEquation, SolveReport)> {
    if init.len() != problem.num_states() {
        return Err(Error::Contract(format!(
            "problem has {} states but {} initial states were given",
            problem.num_states(),
            init.len()
        )));
    }
    let prior = prior.map(|p| PriorTerm { prior: p, mean: p.mean() });
    let prior = prior.as_ref();

    let mut x = init.to_vec();
    let mut eval = evaluate(problem, &x, prior);
    let mut cost = eval.costs.total();
    let initial_cost = cost;
    let mut neq = linearize(&eval, &x, prior)?;
    let mut lambda = config.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut history = vec![cost];

    while iterations < config.max_iterations && !converged {
        iterations += 1;
        let mut accepted = false;
        while lambda <= config.max_lambda {
            let Some(dx) = damped_step(&neq, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let step = dx.norm();
            let candidate = retract(&x, &dx);
            let candidate_eval = evaluate(problem, &candidate, prior);
            let candidate_cost = candidate_eval.costs.total();
            if candidate_cost.is_finite() && candidate_cost <= cost {
                let decrease = cost - candidate_cost;
                x = candidate;
                eval = candidate_eval;
                neq = linearize(&eval, &x, prior)?;
                history.push(candidate_cost);
                cost = candidate_cost;
                last_step = step;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step < config.eps_step || decrease <= config.eps_cost * cost.max(f64::MIN_POSITIVE) {
                    converged = true;
                }
                break;
            }
            if step < config.eps_step {
                // no descent left at this resolution
                last_step = step;
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted && !converged {
            break;
        }
    }

    let mut report = SolveReport {
        iterations,
        initial_cost,
        final_cost: cost,
        costs: eval.costs,
        spatial_used: 0,
        temporal_used: 0,
        dropped: 0,
        converged,
        low_confidence: false,
        final_step_norm: last_step,
        cost_history: history,
        states: x.clone(),
    };
    for b in &eval.blocks {
        match b.term {
            Term::Spatial => report.spatial_used += b.items(),
            Term::Temporal | Term::Coord => report.temporal_used += b.items(),
            _ => continue,
        }
        report.dropped += b.dropped;
    }
    let dense = report.spatial_used + report.temporal_used + report.dropped;
    report.low_confidence = dense > 0 && report.dropped as f64 > config.low_confidence_drop_ratio * dense as f64;
    Ok((x, neq, report))
}

/// Joint solve of a track's first two frames.
pub fn solve_two_frame(
    problem: &ObjectProblem,
    init: [ObjectState; 2],
    config: &SolverConfig,
) -> Result<(Vec<ObjectState>, NormalEquation, SolveReport)> {
    if problem.previous.is_none() || !problem.previous_frame_terms {
        return Err(Error::Contract("two-frame solve needs both frames' own residuals".into()));
    }
    solve_window(problem, &init, None, config)
}

/// Joint solve of `(x_prev, x_cur)` where `x_prev` is held by the marginal prior.
pub fn solve_with_prior(
    problem: &ObjectProblem,
    prior: &MarginalPrior,
    init: [ObjectState; 2],
    config: &SolverConfig,
) -> Result<(Vec<ObjectState>, NormalEquation, SolveReport)> {
    if problem.previous.is_none() {
        return Err(Error::Contract("prior solve needs a previous frame".into()));
    }
    solve_window(problem, &init, Some(prior), config)
}

pub fn solve_single_frame(
    problem: &ObjectProblem,
    init: ObjectState,
    config: &SolverConfig,
) -> Result<(ObjectState, NormalEquation, SolveReport)> {
    if problem.previous.is_some() {
        return Err(Error::Contract("single-frame solve got a previous frame".into()));
    }
    let (x, neq, report) = solve_window(problem, &[init], None, config)?;
    Ok((x[0], neq, report))
}
