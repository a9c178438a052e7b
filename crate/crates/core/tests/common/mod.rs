#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use st3d::geometry::{alpha_from_theta, project};
use st3d::optim::{marginalize, solve_window, Placement, ResidualBlock, SolverConfig, Term, WindowProblem};
use st3d::scenesim::{generate_scenario, render_frame, CameraSpec, NoiseConfig, ObjectSpec, RenderConfig, Scenario, ScenarioSpec};
use st3d::{Box2D, Box3D, CameraIntrinsics, CoordPatch, DenseCueFrame, Dimensions, ObjectState, PairedBoxes, StereoFrame};

pub fn car(id: u64, position: [f64; 3], yaw: f64, velocity: [f64; 3]) -> ObjectSpec {
    ObjectSpec {
        id,
        dimensions: [1.6, 1.5, 3.9],
        position,
        yaw,
        velocity,
        yaw_rate: 0.0,
        first_frame: 0,
        last_frame: None,
        hidden: vec![],
    }
}

pub fn scene_with_camera(objects: Vec<ObjectSpec>, frames: usize, camera: CameraSpec, seed: u64) -> Scenario {
    let spec = ScenarioSpec {
        version: 1,
        frames,
        dt: 0.1,
        camera,
        objects,
        random: None,
        points_per_face: 60,
    };
    generate_scenario(&spec, seed).expect("valid scenario")
}

pub fn scene(objects: Vec<ObjectSpec>, frames: usize, seed: u64) -> Scenario {
    scene_with_camera(objects, frames, CameraSpec::default(), seed)
}

pub fn render_clean(s: &Scenario, frame: usize) -> (StereoFrame, Vec<DenseCueFrame>) {
    render_frame(s, frame, &NoiseConfig::zero(), &RenderConfig::default()).expect("render")
}

pub fn truth(s: &Scenario, id: u64, frame: usize) -> ObjectState {
    s.object(id).and_then(|o| o.states[frame]).expect("object present")
}

pub fn perturb(state: &ObjectState, dp: f64, dyaw: f64, rng: &mut impl Rng) -> ObjectState {
    let p = state.position;
    ObjectState::new(
        p.x + rng.random_range(-dp..=dp),
        p.y + rng.random_range(-dp..=dp),
        p.z + rng.random_range(-dp..=dp),
        state.yaw + rng.random_range(-dyaw..=dyaw),
    )
}

fn shifted(states: &[ObjectState], col: usize, h: f64) -> Vec<ObjectState> {
    let mut out = states.to_vec();
    let s = &mut out[col / 4];
    let mut a = s.as_array();
    a[col % 4] += h;
    // no wrapping, so that the difference quotient stays continuous
    s.position = nalgebra::Vector3::new(a[0], a[1], a[2]);
    s.yaw = a[3];
    out
}

/// Central-difference Jacobian of the block values with respect to the
/// states the block's placement refers to. `None` if the set of surviving
/// items changes under the perturbation.
pub fn finite_difference(
    eval: &dyn Fn(&[ObjectState]) -> ResidualBlock,
    states: &[ObjectState],
    h: f64,
) -> Option<DMatrix<f64>> {
    let base = eval(states);
    let cols = base.placement.cols();
    let rows = base.values.len();
    let mut jac = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let col = base.placement.column(c);
        let plus = eval(&shifted(states, col, h));
        let minus = eval(&shifted(states, col, -h));
        if plus.values.len() != rows || minus.values.len() != rows {
            return None;
        }
        for r in 0..rows {
            jac[(r, c)] = (plus.values[r] - minus.values[r]) / (2.0 * h);
        }
    }
    Some(jac)
}

pub fn analytic(block: &ResidualBlock) -> DMatrix<f64> {
    DMatrix::from_row_slice(block.values.len(), block.placement.cols(), &block.jacobian)
}

/// Relative Frobenius error; Jacobians with a norm below 1 are compared absolutely.
pub fn jacobian_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).norm() / fd.norm().max(1.0)
}

/// Residuals linear in the stacked states: one unary block per frame and one
/// pairwise block per consecutive pair.
#[derive(Clone)]
pub struct LinearChain {
    /// `(A, c)` with `r = A x_k + c`, `A` being `m x 4`.
    pub unary: Vec<(DMatrix<f64>, DVector<f64>)>,
    /// `(A, c)` with `r = A [x_k; x_{k+1}] + c`, `A` being `m x 8`.
    pub pairwise: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl LinearChain {
    pub fn random(frames: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let unary = (0..frames).map(|_| (mat(5, 4), mat(5, 1).column(0).into_owned() * 0.3)).collect();
        let pairwise = (1..frames).map(|_| (mat(6, 8), mat(6, 1).column(0).into_owned() * 0.3)).collect();
        Self { unary, pairwise }
    }

    pub fn frames(&self) -> usize {
        self.unary.len()
    }

    fn block(a: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, placement: Placement) -> ResidualBlock {
        let r = a * x + c;
        let mut b = ResidualBlock::new(Term::Other, placement, 1, None);
        for i in 0..r.len() {
            let row: Vec<f64> = a.row(i).iter().copied().collect();
            b.push_item(1.0, &[r[i]], &row);
        }
        b
    }

    /// Dense least-squares solution over all frames, from the stacked system.
    pub fn batch_solution(&self) -> DVector<f64> {
        let n = 4 * self.frames();
        let rows: usize = self.unary.iter().map(|(a, _)| a.nrows()).sum::<usize>()
            + self.pairwise.iter().map(|(a, _)| a.nrows()).sum::<usize>();
        let mut j = DMatrix::zeros(rows, n);
        let mut r0 = DVector::zeros(rows);
        let mut row = 0;
        for (k, (a, c)) in self.unary.iter().enumerate() {
            j.view_mut((row, 4 * k), (a.nrows(), 4)).copy_from(a);
            r0.rows_mut(row, a.nrows()).copy_from(c);
            row += a.nrows();
        }
        for (k, (a, c)) in self.pairwise.iter().enumerate() {
            j.view_mut((row, 4 * k), (a.nrows(), 8)).copy_from(a);
            r0.rows_mut(row, a.nrows()).copy_from(c);
            row += a.nrows();
        }
        let qr = j.clone().qr();
        let rhs = -(qr.q().transpose() * r0);
        qr.r().solve_upper_triangular(&rhs).expect("full column rank")
    }

    /// The two-state window over frames `(k, k+1)`; `first` adds frame `k`'s unary term.
    pub fn window(&self, k: usize, first: bool) -> LinearWindow<'_> {
        LinearWindow { chain: self, k, first }
    }
}

pub struct LinearWindow<'a> {
    chain: &'a LinearChain,
    k: usize,
    first: bool,
}

impl WindowProblem for LinearWindow<'_> {
    fn num_states(&self) -> usize {
        2
    }

    fn blocks(&self, states: &[ObjectState]) -> Vec<ResidualBlock> {
        let x0 = DVector::from_column_slice(&states[0].as_array());
        let x1 = DVector::from_column_slice(&states[1].as_array());
        let mut out = Vec::new();
        if self.first {
            let (a, c) = &self.chain.unary[self.k];
            out.push(LinearChain::block(a, c, &x0, Placement::Single(0)));
        }
        let (a, c) = &self.chain.unary[self.k + 1];
        out.push(LinearChain::block(a, c, &x1, Placement::Single(1)));
        let (a, c) = &self.chain.pairwise[self.k];
        let both = DVector::from_iterator(8, x0.iter().chain(x1.iter()).copied());
        out.push(LinearChain::block(a, c, &both, Placement::Pair));
        out
    }
}

/// Monte-Carlo estimate of the 3D IoU: jittered stratified samples over the
/// volume of `a` (`per_axis`³ of them) estimate the fraction of `a` inside `b`.
pub fn iou3d_monte_carlo(a: &st3d::Box3D, b: &st3d::Box3D, per_axis: usize, rng: &mut impl Rng) -> f64 {
    let ha = a.dimensions.half_extents();
    let hb = b.dimensions.half_extents();
    let n = per_axis as f64;
    let mut hits = 0usize;
    for i in 0..per_axis {
        for j in 0..per_axis {
            for k in 0..per_axis {
                let cell = |idx: usize, half: f64, rng: &mut dyn rand::RngCore| {
                    -half + 2.0 * half * (idx as f64 + rng.random::<f64>()) / n
                };
                let local = nalgebra::Vector3::new(cell(i, ha.x, rng), cell(j, ha.y, rng), cell(k, ha.z, rng));
                let q = b.state.to_body(&a.state.to_camera(&local));
                if q.x.abs() <= hb.x && q.y.abs() <= hb.y && q.z.abs() <= hb.z {
                    hits += 1;
                }
            }
        }
    }
    let va = a.dimensions.volume();
    let inter = va * hits as f64 / (n * n * n);
    inter / (va + b.dimensions.volume() - inter)
}

/// Ten frames; two cars drift out through the left and right image borders
/// while a third drives ahead in the middle.
pub fn truncation_scene(seed: u64) -> Scenario {
    scene(
        vec![
            car(1, [-10.8, 0.9, 14.0], 0.3, [-0.18, 0.0, 0.05]),
            car(2, [11.6, 0.9, 14.0], -0.2, [0.25, 0.0, 0.05]),
            car(3, [0.5, 0.9, 20.0], 0.05, [0.0, 0.0, 0.3]),
        ],
        10,
        seed,
    )
}

/// Ten frames; a near car crosses in front of two farther ones.
pub fn occlusion_scene(seed: u64) -> Scenario {
    scene(
        vec![
            car(1, [-4.5, 0.9, 11.0], 1.57, [0.9, 0.0, 0.0]),
            car(2, [3.0, 0.9, 18.0], -1.4, [-0.4, 0.0, 0.05]),
            car(3, [-0.5, 0.9, 24.0], 0.1, [0.05, 0.0, 0.3]),
        ],
        10,
        seed,
    )
}

/// Ten frames; three cars cross paths in the image with partial occlusion only.
pub fn crossing_scene(seed: u64) -> Scenario {
    scene(
        vec![
            car(1, [-3.0, 0.9, 10.0], 0.0, [0.6, 0.0, 0.0]),
            car(2, [3.0, 0.9, 20.0], 1.57, [-0.6, 0.0, 0.0]),
            car(3, [-6.0, 0.9, 15.0], 0.3, [0.2, 0.0, 0.2]),
        ],
        10,
        seed,
    )
}

/// Zero-noise frames whose initial boxes are shifted uniformly by up to `dp`
/// meters per axis and `dyaw` radians, with ground-truth ids removed.
pub fn perturbed_inputs(s: &Scenario, dp: f64, dyaw: f64, seed: u64) -> Vec<st3d::tracker::FrameInput> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..s.frames)
        .map(|f| {
            let (stereo, cues) = render_clean(s, f);
            let detections = st3d::pipeline::anonymize(cues)
                .into_iter()
                .map(|mut c| {
                    c.initial_box.state = perturb(&c.initial_box.state, dp, dyaw, &mut rng);
                    c
                })
                .collect();
            st3d::tracker::FrameInput { frame: f, stereo: std::sync::Arc::new(stereo), detections }
        })
        .collect()
}

pub fn random_intrinsics(rng: &mut impl Rng) -> CameraIntrinsics {
    let f = rng.random_range(500.0..900.0);
    CameraIntrinsics::new(f, f * rng.random_range(0.95..1.05), 620.0, 185.0, 1242, 375).unwrap()
}

pub fn random_state(rng: &mut impl Rng) -> ObjectState {
    ObjectState::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(0.0..2.0),
        rng.random_range(6.0..40.0),
        rng.random_range(-3.0..3.0),
    )
}

/// Cues with random pixels and depths, a smooth synthetic coordinate map and
/// pose observations near the given state.
pub fn synthetic_cues(state: &ObjectState, n: usize, k: &CameraIntrinsics, rng: &mut impl Rng) -> DenseCueFrame {
    let pixels: Vec<[f64; 2]> =
        (0..n).map(|_| [rng.random_range(50.0..1190.0), rng.random_range(30.0..345.0)]).collect();
    let local_depth = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let local_coords = (0..n).map(|_| [rng.random_range(-0.8..0.8), rng.random_range(-0.7..0.7), rng.random_range(-2.0..2.0)]).collect();
    let step = 3.0;
    let (cols, rows) = (k.width / 3, k.height / 3);
    let cells = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c as f64 * step, r as f64 * step)))
        .map(|(u, v)| Some([(u / 40.0).sin(), (v / 30.0).cos(), (u + 2.0 * v) / 500.0]))
        .collect();
    let c = project(&state.position, k).unwrap();
    DenseCueFrame {
        frame: 0,
        track_id: Some(1),
        pixels,
        local_depth,
        local_coords,
        centroid_projection: [c.x + rng.random_range(-3.0..3.0), c.y + rng.random_range(-3.0..3.0)],
        observation_angle: alpha_from_theta(state.yaw, &state.position).unwrap() + rng.random_range(-0.1..0.1),
        paired_boxes: PairedBoxes { current: Box2D::new(0.0, 0.0, 10.0, 10.0), previous: None },
        initial_box: Box3D::new(*state, Dimensions::new(1.6, 1.5, 3.9)),
        coord_map: Some(CoordPatch { origin: [0.0, 0.0], step, cols, rows, cells }),
    }
}

pub fn identity_pairs(n: usize) -> st3d::correspond::CorrespondenceSet {
    st3d::correspond::CorrespondenceSet { pairs: (0..n).map(|i| (i, i)).collect(), distances: vec![0.0; n] }
}

/// Sequential two-state solves with marginalization against the dense batch solution.
pub fn sequential_last_state(chain: &LinearChain) -> DVector<f64> {
    let config = SolverConfig { max_iterations: 50, eps_step: 1e-14, eps_cost: 0.0, ..SolverConfig::default() };
    let zero = ObjectState::new(0.0, 0.0, 0.0, 0.0);
    let (mut x, mut neq, _) = solve_window(&chain.window(0, true), &[zero, zero], None, &config).unwrap();
    for k in 1..chain.frames() - 1 {
        let prior = marginalize(&neq, k).unwrap();
        let (nx, nneq, _) = solve_window(&chain.window(k, false), &[x[1], x[1]], Some(&prior), &config).unwrap();
        x = nx;
        neq = nneq;
    }
    DVector::from_column_slice(&x[1].as_array())
}

/// Joins per-sequence trajectory sets into one, shifting frames and ids so
/// that sequences never interact during evaluation.
pub fn concat_sequences(sequences: &[Vec<st3d::io::TrajectoryRecord>]) -> Vec<st3d::io::TrajectoryRecord> {
    sequences
        .iter()
        .enumerate()
        .flat_map(|(i, seq)| {
            seq.iter().map(move |r| st3d::io::TrajectoryRecord {
                frame: r.frame + 10_000 * i,
                track_id: r.track_id + 1_000_000 * i as u64,
                ..*r
            })
        })
        .collect()
}
