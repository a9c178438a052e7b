//! Per-object observation bundles consumed by the optimizer and tracker.

use serde::{Deserialize, Serialize};

use crate::geometry::{Box2D, Box3D, Vec2, Vec3};
use crate::image::Image;

/// Rectified left/right intensity pair for one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoFrame {
    pub frame: usize,
    pub left: Image,
    pub right: Image,
}

/// Dense local-coordinate map over an image patch, sampled on a regular
/// lattice of pixels `origin + (i, j) * step`. Cells off the object are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordPatch {
    pub origin: [f64; 2],
    pub step: f64,
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Option<[f64; 3]>>,
}

impl CoordPatch {
    fn cell(&self, col: usize, row: usize) -> Option<Vec3> {
        self.cells[row * self.cols + col].map(Vec3::from)
    }

    /// Bilinear coordinate lookup with its 3x2 pixel-space derivative. `None`
    /// when any of the four surrounding cells is off the object.
    pub fn sample(&self, pixel: &Vec2) -> Option<(Vec3, [Vec3; 2])> {
        if self.cols < 2 || self.rows < 2 {
            return None;
        }
        let gx = (pixel.x - self.origin[0]) / self.step;
        let gy = (pixel.y - self.origin[1]) / self.step;
        if !(gx >= 0.0 && gy >= 0.0 && gx <= (self.cols - 1) as f64 && gy <= (self.rows - 1) as f64) {
            return None;
        }
        let c0 = (gx.floor() as usize).min(self.cols - 2);
        let r0 = (gy.floor() as usize).min(self.rows - 2);
        let fx = gx - c0 as f64;
        let fy = gy - r0 as f64;
        let c00 = self.cell(c0, r0)?;
        let c10 = self.cell(c0 + 1, r0)?;
        let c01 = self.cell(c0, r0 + 1)?;
        let c11 = self.cell(c0 + 1, r0 + 1)?;
        let top = c00 + (c10 - c00) * fx;
        let bottom = c01 + (c11 - c01) * fx;
        let value = top + (bottom - top) * fy;
        let du = ((c10 - c00) * (1.0 - fy) + (c11 - c01) * fy) / self.step;
        let dv = (bottom - top) / self.step;
        Some((value, [du, dv]))
    }
}

/// Current and previous-frame boxes of one object from a paired detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedBoxes {
    pub current: Box2D,
    pub previous: Option<Box2D>,
}

/// Everything observed about one object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseCueFrame {
    pub frame: usize,
    /// Ground-truth identity when produced by the simulator; unset for tracker input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    pub pixels: Vec<[f64; 2]>,
    pub local_depth: Vec<f64>,
    pub local_coords: Vec<[f64; 3]>,
    pub centroid_projection: [f64; 2],
    pub observation_angle: f64,
    pub paired_boxes: PairedBoxes,
    pub initial_box: Box3D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_map: Option<CoordPatch>,
}

impl DenseCueFrame {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixel(&self, i: usize) -> Vec2 {
        Vec2::from(self.pixels[i])
    }

    pub fn coord(&self, i: usize) -> Vec3 {
        Vec3::from(self.local_coords[i])
    }

    pub fn centroid(&self) -> Vec2 {
        Vec2::from(self.centroid_projection)
    }

    /// Checks that the per-pixel arrays agree in length and values are finite.
    pub fn is_consistent(&self) -> bool {
        let n = self.pixels.len();
        self.local_depth.len() == n
            && self.local_coords.len() == n
            && self.pixels.iter().flatten().all(|v| v.is_finite())
            && self.local_depth.iter().all(|v| v.is_finite())
            && self.local_coords.iter().flatten().all(|v| v.is_finite())
    }

    /// Keeps only the per-pixel entries whose index satisfies `keep`.
    pub fn retain_pixels(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let mask: Vec<bool> = (0..self.len()).map(&mut keep).collect();
        let mut it = mask.iter();
        self.pixels.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.local_depth.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.local_coords.retain(|_| *it.next().unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_patch_interpolates_affine_field() {
        let step = 2.0;
        let (cols, rows) = (5, 4);
        let field = |u: f64, v: f64| [0.01 * u, -0.02 * v, 0.5];
        let cells = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c, r)))
            .map(|(c, r)| Some(field(10.0 + c as f64 * step, 20.0 + r as f64 * step)))
            .collect();
        let patch = CoordPatch { origin: [10.0, 20.0], step, cols, rows, cells };
        let (v, g) = patch.sample(&Vec2::new(13.3, 23.1)).unwrap();
        assert!((v - Vec3::from(field(13.3, 23.1))).norm() < 1e-12);
        assert!((g[0] - Vec3::new(0.01, 0.0, 0.0)).norm() < 1e-12);
        assert!((g[1] - Vec3::new(0.0, -0.02, 0.0)).norm() < 1e-12);
        assert!(patch.sample(&Vec2::new(9.9, 23.0)).is_none());
    }

    #[test]
    fn coord_patch_rejects_background_neighbours() {
        let mut cells = vec![Some([0.0; 3]); 9];
        cells[4] = None;
        let patch = CoordPatch { origin: [0.0, 0.0], step: 1.0, cols: 3, rows: 3, cells };
        assert!(patch.sample(&Vec2::new(0.5, 0.5)).is_none());
        assert!(patch.sample(&Vec2::new(0.0, 0.0)).is_none());
    }
}
