//! Pinhole camera, yaw-only object poses, and box overlap measures.
//!
//! Camera frame convention: x right, y down, z forward. Object yaw rotates
//! about the camera y axis; a yaw of zero means the object's length axis
//! points along +z.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid intrinsics {self:?}")))
        }
    }

    /// True when the pixel lies inside the image, including the last row/column.
    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// Rectified stereo pair sharing one set of intrinsics. The right camera sits
/// `baseline` meters along +x from the left one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self> {
        intrinsics.validate()?;
        if !(baseline > 0.0) {
            return Err(Error::Domain(format!("baseline must be positive, got {baseline}")));
        }
        Ok(Self { intrinsics, baseline })
    }

    /// Translation taking a left-camera point into the right camera frame.
    pub fn stereo_offset(&self) -> Vec3 {
        Vec3::new(-self.baseline, 0.0, 0.0)
    }
}

impl Default for StereoRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 700.0,
                fy: 700.0,
                cx: 600.0,
                cy: 180.0,
                width: 1242,
                height: 375,
            },
            baseline: 0.54,
        }
    }
}

/// Object pose in the instantaneous camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vec3,
    pub yaw: f64,
}

impl ObjectState {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { position: Vec3::new(x, y, z), yaw: wrap_angle(yaw) }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        yaw_rotation(self.yaw)
    }

    /// Body-frame point to camera frame.
    pub fn to_camera(&self, body: &Vec3) -> Vec3 {
        self.rotation() * body + self.position
    }

    /// Camera-frame point to body frame.
    pub fn to_body(&self, point: &Vec3) -> Vec3 {
        self.rotation().transpose() * (point - self.position)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.position.x, self.position.y, self.position.z, self.yaw]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Dimensions {
    pub fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    pub fn half_extents(&self) -> Vec3 {
        Vec3::new(self.w / 2.0, self.h / 2.0, self.l / 2.0)
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.l > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub state: ObjectState,
    pub dimensions: Dimensions,
}

impl Box3D {
    pub fn new(state: ObjectState, dimensions: Dimensions) -> Self {
        Self { state, dimensions }
    }

    pub fn centroid(&self) -> Vec3 {
        self.state.position
    }

    /// The eight corners in camera frame; bit 0 selects +x, bit 1 +y, bit 2 +z
    /// in the body frame.
    pub fn corners(&self) -> [Vec3; 8] {
        let half = self.dimensions.half_extents();
        std::array::from_fn(|mask| {
            let sign = |bit: usize| if mask & bit != 0 { 1.0 } else { -1.0 };
            let body = Vec3::new(sign(1) * half.x, sign(2) * half.y, sign(4) * half.z);
            self.state.to_camera(&body)
        })
    }

    /// Counter-clockwise footprint in the (x, z) ground plane.
    pub fn bev_footprint(&self) -> [Vec2; 4] {
        let half = self.dimensions.half_extents();
        let (s, c) = self.state.yaw.sin_cos();
        let p = self.state.position;
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sz)| {
            let bx = sx * half.x;
            let bz = sz * half.z;
            Vec2::new(p.x + c * bx + s * bz, p.z - s * bx + c * bz)
        })
    }

    /// Vertical extent `(top, bottom)` along camera y.
    pub fn vertical_span(&self) -> (f64, f64) {
        let y = self.state.position.y;
        let half = self.dimensions.h / 2.0;
        (y - half, y + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }
}

pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`yaw_rotation`] with respect to yaw.
pub fn yaw_rotation_derivative(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

pub fn project(point: &Vec3, k: &CameraIntrinsics) -> Result<Vec2> {
    if !(point.z > 0.0) {
        return Err(Error::Domain(format!("cannot project point with depth {}", point.z)));
    }
    Ok(project_unchecked(point, k))
}

#[inline]
pub(crate) fn project_unchecked(point: &Vec3, k: &CameraIntrinsics) -> Vec2 {
    Vec2::new(k.fx * point.x / point.z + k.cx, k.fy * point.y / point.z + k.cy)
}

pub fn back_project(pixel: &Vec2, depth: f64, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("back-projection depth must be positive, got {depth}")));
    }
    if !pixel.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite pixel".into()));
    }
    Ok(back_project_unchecked(pixel, depth, k))
}

#[inline]
pub(crate) fn back_project_unchecked(pixel: &Vec2, depth: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new((pixel.x - k.cx) * depth / k.fx, (pixel.y - k.cy) * depth / k.fy, depth)
}

/// Observation angle from global yaw: `alpha = theta + atan2(x, z)`.
pub fn alpha_from_theta(yaw: f64, position: &Vec3) -> Result<f64> {
    if !(position.z > 0.0) {
        return Err(Error::Domain(format!("observation angle needs z > 0, got {}", position.z)));
    }
    Ok(wrap_angle(yaw + position.x.atan2(position.z)))
}

pub fn theta_from_alpha(alpha: f64, position: &Vec3) -> Result<f64> {
    if !(position.z > 0.0) {
        return Err(Error::Domain(format!("observation angle needs z > 0, got {}", position.z)));
    }
    Ok(wrap_angle(alpha - position.x.atan2(position.z)))
}

/// Depth implied by a known metric height and its image height.
pub fn coarse_depth(k: &CameraIntrinsics, h3d: f64, h2d: f64) -> Result<f64> {
    if !(h2d > 0.0) || !(h3d > 0.0) {
        return Err(Error::Domain(format!("coarse depth needs positive heights, got h3d={h3d}, h2d={h2d}")));
    }
    Ok(k.fy * h3d / h2d)
}

pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a_top, a_bottom) = a.vertical_span();
    let (b_top, b_bottom) = b.vertical_span();
    let overlap_h = (a_bottom.min(b_bottom) - a_top.max(b_top)).max(0.0);
    if overlap_h == 0.0 {
        return 0.0;
    }
    let clipped = clip_convex(&a.bev_footprint(), &b.bev_footprint());
    let inter = polygon_area(&clipped).abs() * overlap_h;
    let union = a.dimensions.volume() + b.dimensions.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn centroid_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.centroid() - b.centroid()).norm()
}

/// Signed shoelace area; positive for counter-clockwise vertices.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % n];
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland-Hodgman clip of `subject` against the convex polygon `clip`.
/// Both inputs may have either orientation.
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut clip_ccw = clip.to_vec();
    if polygon_area(&clip_ccw) < 0.0 {
        clip_ccw.reverse();
    }
    let mut output = subject.to_vec();
    let m = clip_ccw.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip_ccw[i];
        let b = clip_ccw[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let cur_in = cross(&a, &b, &cur) >= 0.0;
            let prev_in = cross(&a, &b, &prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(&prev, &cur, &a, &b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(&prev, &cur, &a, &b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: &Vec2, q: &Vec2, a: &Vec2, b: &Vec2) -> Vec2 {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < f64::EPSILON {
        return *p;
    }
    let t = dp / denom;
    p + (q - p) * t
}
