//! Synthetic stereo scenes: ground-truth trajectories of rigid cuboids, rendered
//! intensity pairs, and per-object dense cues with configurable noise.

mod occlusion;
mod render;

pub use occlusion::occlusion_cull;
pub use render::{render_frame, texture, RenderConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics, Dimensions, ObjectState, StereoRig, Vec3};
use crate::rng::substream;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Camera block of a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        let rig = StereoRig::default();
        let k = rig.intrinsics;
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height, baseline: rig.baseline }
    }
}

impl CameraSpec {
    pub fn rig(&self) -> Result<StereoRig> {
        let k = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| Error::InvalidScenario(e.to_string()))?;
        StereoRig::new(k, self.baseline).map_err(|e| Error::InvalidScenario(e.to_string()))
    }
}

/// Explicitly scripted object: constant velocity and yaw rate, both per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u64,
    /// `[w, h, l]` in meters.
    pub dimensions: [f64; 3],
    /// Centroid at `first_frame`.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw_rate: f64,
    #[serde(default)]
    pub first_frame: usize,
    #[serde(default)]
    pub last_frame: Option<usize>,
    /// Frames inside the lifespan where the object is absent.
    #[serde(default)]
    pub hidden: Vec<usize>,
}

/// Randomly drawn objects; ranges are `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomObjectsSpec {
    pub count: usize,
    #[serde(default = "default_depth_range")]
    pub depth: [f64; 2],
    #[serde(default = "default_lateral_range")]
    pub lateral: [f64; 2],
    /// Speed in meters per frame.
    #[serde(default = "default_speed_range")]
    pub speed: [f64; 2],
    #[serde(default = "default_yaw_rate_range")]
    pub yaw_rate: [f64; 2],
    /// Minimum number of frames each object exists.
    #[serde(default)]
    pub min_lifespan: Option<usize>,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
}

fn default_depth_range() -> [f64; 2] {
    [10.0, 35.0]
}
fn default_lateral_range() -> [f64; 2] {
    [-6.0, 6.0]
}
fn default_speed_range() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_yaw_rate_range() -> [f64; 2] {
    [-0.02, 0.02]
}
fn default_camera_height() -> f64 {
    1.65
}

/// Versioned scenario description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    pub frames: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub random: Option<RandomObjectsSpec>,
    /// Surface sample points per cuboid face.
    #[serde(default = "default_points_per_face")]
    pub points_per_face: usize,
}

fn default_dt() -> f64 {
    0.1
}
fn default_points_per_face() -> usize {
    150
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        if spec.version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::InvalidScenario(format!(
                "unsupported scenario version {} (expected {SCENARIO_SCHEMA_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario spec serializes")
    }

    /// A small randomized scene, used when no scenario file is given.
    pub fn default_random(frames: usize, count: usize) -> Self {
        Self {
            version: SCENARIO_SCHEMA_VERSION,
            frames,
            dt: default_dt(),
            camera: CameraSpec::default(),
            objects: Vec::new(),
            random: Some(RandomObjectsSpec {
                count,
                depth: default_depth_range(),
                lateral: default_lateral_range(),
                speed: default_speed_range(),
                yaw_rate: default_yaw_rate_range(),
                min_lifespan: None,
                camera_height: default_camera_height(),
            }),
            points_per_face: default_points_per_face(),
        }
    }
}

/// Sample point fixed on the cuboid surface, in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub body: Vec3,
    /// Face index: 0/1 = -x/+x, 2/3 = -y/+y, 4/5 = -z/+z.
    pub face: u8,
}

impl SurfacePoint {
    pub fn normal(&self) -> Vec3 {
        let axis = (self.face / 2) as usize;
        let mut n = Vec3::zeros();
        n[axis] = if self.face % 2 == 0 { -1.0 } else { 1.0 };
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObject {
    pub id: u64,
    pub dimensions: Dimensions,
    /// One entry per frame; `None` where the object does not exist.
    pub states: Vec<Option<ObjectState>>,
    pub texture_phase: [f64; 3],
    pub surface: Vec<SurfacePoint>,
}

impl ScenarioObject {
    pub fn box_at(&self, frame: usize) -> Option<Box3D> {
        self.states.get(frame).copied().flatten().map(|s| Box3D::new(s, self.dimensions))
    }

    pub fn lifespan(&self) -> usize {
        self.states.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rig: StereoRig,
    pub frames: usize,
    pub dt: f64,
    pub seed: u64,
    pub objects: Vec<ScenarioObject>,
}

impl Scenario {
    pub fn object(&self, id: u64) -> Option<&ScenarioObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Ground-truth boxes present at `frame`, with their ids.
    pub fn ground_truth(&self, frame: usize) -> Vec<(u64, Box3D)> {
        self.objects.iter().filter_map(|o| o.box_at(frame).map(|b| (o.id, b))).collect()
    }
}

/// Per-field Gaussian sigmas applied to rendered cues and images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// meters
    pub local_depth: f64,
    /// meters, per component
    pub local_coords: f64,
    /// pixels
    pub centroid_projection: f64,
    /// radians
    pub observation_angle: f64,
    /// meters, per axis
    pub initial_position: f64,
    /// radians
    pub initial_yaw: f64,
    /// pixels, per box edge
    pub box2d: f64,
    /// intensity units
    pub image: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            local_depth: 0.05,
            local_coords: 0.03,
            centroid_projection: 2.0,
            observation_angle: 0.05,
            initial_position: 0.5,
            initial_yaw: 0.1,
            box2d: 2.0,
            image: 0.02,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            local_depth: 0.0,
            local_coords: 0.0,
            centroid_projection: 0.0,
            observation_angle: 0.0,
            initial_position: 0.0,
            initial_yaw: 0.0,
            box2d: 0.0,
            image: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.local_depth,
            self.local_coords,
            self.centroid_projection,
            self.observation_angle,
            self.initial_position,
            self.initial_yaw,
            self.box2d,
            self.image,
        ];
        if sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("noise sigmas must be non-negative: {self:?}")))
        }
    }
}

pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let rig = spec.camera.rig()?;
    if spec.frames < 2 {
        return Err(Error::InvalidScenario(format!("need at least 2 frames, got {}", spec.frames)));
    }
    if spec.points_per_face == 0 {
        return Err(Error::InvalidScenario("points_per_face must be positive".into()));
    }
    let random_count = spec.random.as_ref().map_or(0, |r| r.count);
    if spec.objects.is_empty() && random_count == 0 {
        return Err(Error::InvalidScenario("scenario has no objects".into()));
    }

    let mut objects = Vec::new();
    for o in &spec.objects {
        if objects.iter().any(|x: &ScenarioObject| x.id == o.id) {
            return Err(Error::InvalidScenario(format!("duplicate object id {}", o.id)));
        }
        let states = scripted_states(o, spec.frames)?;
        objects.push(finish_object(o.id, dims_from(o.dimensions, o.id)?, states, spec.points_per_face, seed));
    }

    if let Some(random) = &spec.random {
        let mut rng = substream(seed, "scenario", &[]);
        let mut next_id = objects.iter().map(|o| o.id).max().map_or(1, |m| m + 1);
        for _ in 0..random.count {
            let mut placed = None;
            for _attempt in 0..200 {
                let candidate = random_object(random, spec.frames, &rig, &mut rng);
                if let Some(states) = candidate {
                    let (dims, states) = states;
                    let clash = objects.iter().any(|o| overlaps(o, &dims, &states));
                    if !clash {
                        placed = Some((dims, states));
                        break;
                    }
                }
            }
            let (dims, states) = placed.ok_or_else(|| {
                Error::InvalidScenario("could not place random object without collisions".into())
            })?;
            objects.push(finish_object(next_id, dims, states, spec.points_per_face, seed));
            next_id += 1;
        }
    }

    Ok(Scenario { rig, frames: spec.frames, dt: spec.dt, seed, objects })
}

fn dims_from(d: [f64; 3], id: u64) -> Result<Dimensions> {
    let dims = Dimensions::new(d[0], d[1], d[2]);
    if dims.is_valid() {
        Ok(dims)
    } else {
        Err(Error::InvalidScenario(format!("object {id}: dimensions must be positive, got {d:?}")))
    }
}

fn scripted_states(o: &ObjectSpec, frames: usize) -> Result<Vec<Option<ObjectState>>> {
    let last = o.last_frame.unwrap_or(frames - 1);
    if o.first_frame > last || last >= frames {
        return Err(Error::InvalidScenario(format!(
            "object {}: lifespan {}..={} outside 0..{frames}",
            o.id, o.first_frame, last
        )));
    }
    let start = Vec3::from(o.position);
    let velocity = Vec3::from(o.velocity);
    let mut states = vec![None; frames];
    for (f, slot) in states.iter_mut().enumerate().take(last + 1).skip(o.first_frame) {
        let k = (f - o.first_frame) as f64;
        let p = start + velocity * k;
        if !(p.z > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "object {}: centroid depth {:.3} <= 0 at frame {f}",
                o.id, p.z
            )));
        }
        if !o.hidden.contains(&f) {
            *slot = Some(ObjectState::new(p.x, p.y, p.z, o.yaw + o.yaw_rate * k));
        }
    }
    Ok(states)
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

type Trajectory = (Dimensions, Vec<Option<ObjectState>>);

fn random_object(spec: &RandomObjectsSpec, frames: usize, rig: &StereoRig, rng: &mut impl Rng) -> Option<Trajectory> {
    let dims = Dimensions::new(rng.random_range(1.5..1.9), rng.random_range(1.4..1.7), rng.random_range(3.5..4.5));
    let min_life = spec.min_lifespan.unwrap_or(frames).clamp(2, frames);
    let first = rng.random_range(0..=frames - min_life);
    let last = rng.random_range(first + min_life - 1..frames);
    let speed = uniform(rng, spec.speed);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw_rate = uniform(rng, spec.yaw_rate);
    let z0 = uniform(rng, spec.depth);
    let x0 = uniform(rng, spec.lateral);
    let y = spec.camera_height - dims.h / 2.0;
    let mut states = vec![None; frames];
    let mut p = Vec3::new(x0, y, z0);
    let mut yaw = heading;
    for slot in states.iter_mut().take(last + 1).skip(first) {
        let state = ObjectState::new(p.x, p.y, p.z, yaw);
        if !comfortably_in_view(&Box3D::new(state, dims), rig) {
            return None;
        }
        *slot = Some(state);
        p += Vec3::new(yaw.sin(), 0.0, yaw.cos()) * speed;
        yaw += yaw_rate;
    }
    Some((dims, states))
}

fn comfortably_in_view(b: &Box3D, rig: &StereoRig) -> bool {
    let k = &rig.intrinsics;
    let p = b.centroid();
    if b.corners().iter().any(|c| c.z < 2.0) {
        return false;
    }
    let u = k.fx * p.x / p.z + k.cx;
    u > 0.05 * k.width as f64 && u < 0.95 * k.width as f64
}

fn overlaps(o: &ScenarioObject, dims: &Dimensions, states: &[Option<ObjectState>]) -> bool {
    o.states.iter().zip(states).any(|(a, b)| match (a, b) {
        (Some(a), Some(b)) => {
            let margin = Dimensions::new(dims.w + 1.0, dims.h, dims.l + 1.0);
            crate::geometry::iou3d(&Box3D::new(*a, o.dimensions), &Box3D::new(*b, margin)) > 0.0
        }
        _ => false,
    })
}

fn finish_object(
    id: u64,
    dimensions: Dimensions,
    states: Vec<Option<ObjectState>>,
    points_per_face: usize,
    seed: u64,
) -> ScenarioObject {
    let mut rng = substream(seed, "surface", &[id]);
    let texture_phase = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let surface = sample_surface(&dimensions, points_per_face, &mut rng);
    ScenarioObject { id, dimensions, states, texture_phase, surface }
}

/// Jittered grid of points on each of the six faces, kept off the edges.
fn sample_surface(dims: &Dimensions, per_face: usize, rng: &mut impl Rng) -> Vec<SurfacePoint> {
    let half = dims.half_extents();
    let mut out = Vec::with_capacity(per_face * 6);
    for face in 0u8..6 {
        let axis = (face / 2) as usize;
        let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let aspect = half[a] / half[b];
        let na = ((per_face as f64 * aspect).sqrt().round() as usize).max(1);
        let nb = per_face.div_ceil(na).max(1);
        let mut count = 0;
        'grid: for i in 0..na {
            for j in 0..nb {
                if count == per_face {
                    break 'grid;
                }
                let ja: f64 = rng.random_range(0.15..0.85);
                let jb: f64 = rng.random_range(0.15..0.85);
                let mut body = Vec3::zeros();
                body[axis] = sign * half[axis];
                body[a] = (-1.0 + 2.0 * (i as f64 + ja) / na as f64) * half[a] * 0.95;
                body[b] = (-1.0 + 2.0 * (j as f64 + jb) / nb as f64) * half[b] * 0.95;
                out.push(SurfacePoint { body, face });
                count += 1;
            }
        }
    }
    out
}
