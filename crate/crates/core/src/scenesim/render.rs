use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{occlusion_cull, NoiseConfig, Scenario, ScenarioObject};
use crate::cues::{CoordPatch, DenseCueFrame, PairedBoxes, StereoFrame};
use crate::error::{Error, Result};
use crate::geometry::{alpha_from_theta, project_unchecked, Box2D, Box3D, ObjectState, StereoRig, Vec2, Vec3};
use crate::image::Image;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Upper bound on emitted pixels per object.
    pub max_points: usize,
    /// Objects with fewer surviving pixels are not reported.
    pub min_pixels: usize,
    /// Pixel radius of the sampled-pixel z-buffer.
    pub occlusion_radius: f64,
    /// Approximate cell budget of each coordinate map.
    pub coord_map_cells: usize,
    /// Minimum distance of sampled pixels from the image border.
    pub border: f64,
    /// Faces seen more obliquely than this (cosine of incidence) are not sampled.
    pub min_incidence: f64,
    /// Pixels whose interpolated left and right intensities differ by more
    /// than this in the noiseless render are not sampled.
    pub max_stereo_error: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { max_points: 1000, min_pixels: 8, occlusion_radius: 1.5, coord_map_cells: 4096, border: 2.0, min_incidence: 0.2, max_stereo_error: 8e-4 }
    }
}

/// Procedural surface intensity as a function of object-frame coordinates.
pub fn texture(c: &Vec3, phase: &[f64; 3]) -> f64 {
    use std::f64::consts::TAU;
    0.5 + 0.14 * (TAU * c.x / 1.2 + phase[0]).sin()
        + 0.14 * (TAU * c.z / 1.5 + phase[1]).sin()
        + 0.1 * (TAU * (c.y / 1.0 + 0.3 * c.x + 0.2 * c.z) + phase[2]).sin()
}

fn background(u: usize, v: usize) -> f64 {
    0.5 + 0.15 * (u as f64 / 37.0).sin() * (v as f64 / 23.0).cos()
}

struct View {
    image: Image,
    ids: Vec<i32>,
    faces: Vec<u8>,
    coords: Vec<Vec3>,
}

/// Index of the box face a body-frame surface point lies on.
fn face_of(local: &Vec3, half: &Vec3) -> u8 {
    let k = (0..3).max_by(|&a, &b| (local[a].abs() / half[a]).total_cmp(&(local[b].abs() / half[b]))).unwrap_or(0);
    2 * k as u8 + u8::from(local[k] > 0.0)
}

impl View {
    fn id_at(&self, x: usize, y: usize) -> i32 {
        self.ids[y * self.image.width + x]
    }

    /// Object index and face owning all four bilinear neighbours of `p`, if unanimous.
    fn owner(&self, p: &Vec2) -> Option<(i32, u8)> {
        if !self.image.in_bounds(p) {
            return None;
        }
        let w = self.image.width;
        let x0 = (p.x.floor() as usize).min(w - 2);
        let y0 = (p.y.floor() as usize).min(self.image.height - 2);
        let at = |x: usize, y: usize| (self.ids[y * w + x], self.faces[y * w + x]);
        let first = at(x0, y0);
        let same = [(1, 0), (0, 1), (1, 1)].iter().all(|(dx, dy)| at(x0 + dx, y0 + dy) == first);
        (same && first.0 >= 0).then_some(first)
    }
}

/// Slab test in the body frame; returns the entry distance along `dir`.
fn ray_box(origin: &Vec3, dir: &Vec3, half: &Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t1 = (-half[k] - origin[k]) / dir[k];
        let t2 = (half[k] - origin[k]) / dir[k];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

fn projected_bounds(b: &Box3D, camera: &Vec3, rig: &StereoRig) -> Option<Box2D> {
    let k = &rig.intrinsics;
    let corners = b.corners();
    if corners.iter().any(|c| c.z - camera.z < 0.1) {
        return None;
    }
    let mut r = Box2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        let p = project_unchecked(&(c - camera), k);
        r.x_min = r.x_min.min(p.x);
        r.y_min = r.y_min.min(p.y);
        r.x_max = r.x_max.max(p.x);
        r.y_max = r.y_max.max(p.y);
    }
    let clipped = Box2D::new(
        r.x_min.max(0.0),
        r.y_min.max(0.0),
        r.x_max.min((k.width - 1) as f64),
        r.y_max.min((k.height - 1) as f64),
    );
    clipped.is_valid().then_some(clipped)
}

fn render_view(objects: &[(&ScenarioObject, Box3D)], camera: Vec3, rig: &StereoRig) -> View {
    let k = &rig.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut view = View {
        image: Image::from_fn(w, h, background),
        ids: vec![-1; w * h],
        faces: vec![0; w * h],
        coords: vec![Vec3::zeros(); w * h],
    };
    let mut done = vec![false; w * h];
    let frames: Vec<_> = objects
        .iter()
        .map(|(o, b)| (b.state.rotation().transpose(), b.state.position, o.dimensions.half_extents(), o.texture_phase))
        .collect();
    for (_, b) in objects {
        let Some(bounds) = projected_bounds(b, &camera, rig) else { continue };
        let x0 = (bounds.x_min.floor() as usize).saturating_sub(1);
        let y0 = (bounds.y_min.floor() as usize).saturating_sub(1);
        let x1 = ((bounds.x_max.ceil() as usize) + 1).min(w - 1);
        let y1 = ((bounds.y_max.ceil() as usize) + 1).min(h - 1);
        for v in y0..=y1 {
            for u in x0..=x1 {
                let idx = v * w + u;
                if done[idx] {
                    continue;
                }
                done[idx] = true;
                let dir = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                let mut best: Option<(f64, usize, Vec3)> = None;
                for (j, (rt, p, half, _)) in frames.iter().enumerate() {
                    let ob = rt * (camera - p);
                    let db = rt * dir;
                    if let Some(t) = ray_box(&ob, &db, half) {
                        if best.is_none_or(|(bt, _, _)| t < bt) {
                            best = Some((t, j, ob + db * t));
                        }
                    }
                }
                if let Some((_, j, local)) = best {
                    view.ids[idx] = j as i32;
                    view.faces[idx] = face_of(&local, &frames[j].2);
                    view.coords[idx] = local;
                    view.image.data[idx] = texture(&local, &frames[j].3);
                }
            }
        }
    }
    view
}

fn add_image_noise(image: &mut Image, sigma: f64, seed: u64, frame: usize, side: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = substream(seed, "image", &[frame as u64, side]);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in image.data.iter_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
}

fn gauss(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

fn noisy_box(truth: &Box2D, sigma: f64, seed: u64, id: u64, frame: usize) -> Box2D {
    let mut rng = substream(seed, "box2d", &[id, frame as u64]);
    let mut b = Box2D::new(
        truth.x_min + gauss(&mut rng, sigma),
        truth.y_min + gauss(&mut rng, sigma),
        truth.x_max + gauss(&mut rng, sigma),
        truth.y_max + gauss(&mut rng, sigma),
    );
    if b.x_max <= b.x_min {
        b.x_max = b.x_min + 1.0;
    }
    if b.y_max <= b.y_min {
        b.y_max = b.y_min + 1.0;
    }
    b
}

/// Renders the stereo pair and the dense cues of every visible object at `frame`.
///
/// Surface samples are the object's fixed body-frame points on faces turned
/// towards both cameras, pruned by the sampled-pixel z-buffer and by the
/// rendered object-id buffers so that every emitted pixel and its stereo warp
/// interpolate only that object's texture. Noise is added afterwards.
pub fn render_frame(
    scenario: &Scenario,
    frame: usize,
    noise: &NoiseConfig,
    config: &RenderConfig,
) -> Result<(StereoFrame, Vec<DenseCueFrame>)> {
    if frame >= scenario.frames {
        return Err(Error::Contract(format!("frame {frame} out of range 0..{}", scenario.frames)));
    }
    noise.validate()?;
    let rig = &scenario.rig;
    let k = &rig.intrinsics;
    let right_camera = Vec3::new(rig.baseline, 0.0, 0.0);

    let present: Vec<(&ScenarioObject, Box3D)> = scenario
        .objects
        .iter()
        .filter_map(|o| o.box_at(frame).map(|b| (o, b)))
        .filter(|(_, b)| b.corners().iter().all(|c| c.z > 0.1))
        .collect();

    let mut left = render_view(&present, Vec3::zeros(), rig);
    let mut right = render_view(&present, right_camera, rig);

    // noiseless candidates, with the true box as initial box for depth ordering
    let mut candidates = Vec::new();
    for (o, b) in &present {
        let Some(truth2d) = projected_bounds(b, &Vec3::zeros(), rig) else { continue };
        let mut cue = DenseCueFrame {
            frame,
            track_id: Some(o.id),
            pixels: Vec::new(),
            local_depth: Vec::new(),
            local_coords: Vec::new(),
            centroid_projection: [0.0; 2],
            observation_angle: 0.0,
            paired_boxes: PairedBoxes { current: truth2d, previous: None },
            initial_box: *b,
            coord_map: None,
        };
        let rot = b.state.rotation();
        for sp in &o.surface {
            let x = b.state.to_camera(&sp.body);
            let n = rot * sp.normal();
            let facing = |c: Vec3| -n.dot(&c) / c.norm() >= config.min_incidence.max(1e-9);
            if !facing(x) || !facing(x - right_camera) || x.z < 0.1 {
                continue;
            }
            let u = project_unchecked(&x, k);
            cue.pixels.push([u.x, u.y]);
            cue.local_depth.push(x.z - b.state.position.z);
            cue.local_coords.push([sp.body.x, sp.body.y, sp.body.z]);
        }
        candidates.push((o, *b, cue));
    }
    let culled = occlusion_cull(candidates.iter().map(|(_, _, c)| c.clone()).collect(), config.occlusion_radius);

    let border = config.border.max(1.0);
    let inside = |p: &Vec2| {
        p.x >= border && p.y >= border && p.x <= k.width as f64 - 1.0 - border && p.y <= k.height as f64 - 1.0 - border
    };

    let mut cues = Vec::new();
    for (o, b, _) in &candidates {
        let Some(mut cue) = culled.iter().find(|c| c.track_id == Some(o.id)).cloned() else { continue };
        let id = present.iter().position(|(p, _)| p.id == o.id).expect("present object") as i32;
        let half = o.dimensions.half_extents();
        let keep: Vec<bool> = (0..cue.len())
            .map(|i| {
                let u = cue.pixel(i);
                let depth = cue.local_depth[i] + b.state.position.z;
                let ur = Vec2::new(u.x - k.fx * rig.baseline / depth, u.y);
                let c = cue.coord(i);
                let owner = Some((id, face_of(&c, &half)));
                if !(inside(&u) && inside(&ur) && left.owner(&u) == owner && right.owner(&ur) == owner) {
                    return false;
                }
                match (left.image.bilinear(&u), right.image.bilinear(&ur)) {
                    (Some(l), Some(r)) => (l - r).abs() <= config.max_stereo_error,
                    _ => false,
                }
            })
            .collect();
        cue.retain_pixels(|i| keep[i]);
        let n = cue.len();
        if n > config.max_points {
            let cap = config.max_points;
            cue.retain_pixels(|i| (i * cap) / n != ((i + 1) * cap) / n);
        }
        if cue.len() < config.min_pixels.max(1) {
            continue;
        }
        apply_cue_noise(&mut cue, o, b, &left, id, rig, noise, config)?;
        cues.push(cue);
    }

    add_image_noise(&mut left.image, noise.image, noise.seed, frame, 0);
    add_image_noise(&mut right.image, noise.image, noise.seed, frame, 1);
    Ok((StereoFrame { frame, left: left.image, right: right.image }, cues))
}

#[allow(clippy::too_many_arguments)]
fn apply_cue_noise(
    cue: &mut DenseCueFrame,
    o: &ScenarioObject,
    b: &Box3D,
    left: &View,
    id: i32,
    rig: &StereoRig,
    noise: &NoiseConfig,
    config: &RenderConfig,
) -> Result<()> {
    let k = &rig.intrinsics;
    let frame = cue.frame;
    let mut rng = substream(noise.seed, "cues", &[frame as u64, o.id]);
    for d in cue.local_depth.iter_mut() {
        *d += gauss(&mut rng, noise.local_depth);
    }
    for c in cue.local_coords.iter_mut() {
        for v in c.iter_mut() {
            *v += gauss(&mut rng, noise.local_coords);
        }
    }
    let p = b.state.position;
    let centroid = project_unchecked(&p, k);
    cue.centroid_projection = [
        centroid.x + gauss(&mut rng, noise.centroid_projection),
        centroid.y + gauss(&mut rng, noise.centroid_projection),
    ];
    cue.observation_angle = crate::geometry::wrap_angle(
        alpha_from_theta(b.state.yaw, &p)? + gauss(&mut rng, noise.observation_angle),
    );
    let init = ObjectState::new(
        p.x + gauss(&mut rng, noise.initial_position),
        p.y + gauss(&mut rng, noise.initial_position),
        p.z + gauss(&mut rng, noise.initial_position),
        b.state.yaw + gauss(&mut rng, noise.initial_yaw),
    );
    cue.initial_box = Box3D::new(init, b.dimensions);

    let truth2d = cue.paired_boxes.current;
    cue.paired_boxes.current = noisy_box(&truth2d, noise.box2d, noise.seed, o.id, frame);
    cue.paired_boxes.previous = frame.checked_sub(1).and_then(|prev| {
        let pb = o.box_at(prev)?;
        let t = projected_bounds(&pb, &Vec3::zeros(), rig)?;
        Some(noisy_box(&t, noise.box2d, noise.seed, o.id, prev))
    });

    // dense coordinate map over the true 2D box
    let area = truth2d.area().max(1.0);
    let step = ((area / config.coord_map_cells.max(1) as f64).sqrt().ceil()).max(1.0) as usize;
    let ox = truth2d.x_min.floor() as usize;
    let oy = truth2d.y_min.floor() as usize;
    let cols = ((truth2d.x_max.ceil() as usize).min(k.width - 1) - ox) / step + 1;
    let rows = ((truth2d.y_max.ceil() as usize).min(k.height - 1) - oy) / step + 1;
    let mut cells = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let (u, v) = (ox + c * step, oy + r * step);
            if left.id_at(u, v) == id {
                let local = left.coords[v * k.width + u];
                cells.push(Some(std::array::from_fn(|a| local[a] + gauss(&mut rng, noise.local_coords))));
            } else {
                cells.push(None);
            }
        }
    }
    cue.coord_map = Some(CoordPatch { origin: [ox as f64, oy as f64], step: step as f64, cols, rows, cells });
    Ok(())
}
