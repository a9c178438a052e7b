//! Bird's-eye-view rendering of trajectories.

use std::collections::BTreeMap;
use std::fmt::Write;

use st3d::io::TrajectoryRecord;

pub const CANVAS: f64 = 800.0;
pub const MARGIN: f64 = 40.0;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Maps ground-plane `(x, z)` meters to SVG pixels: x to the right, z up,
/// one uniform scale that fits every point inside the margins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotTransform {
    pub min_x: f64,
    pub max_z: f64,
    pub scale: f64,
}

impl PlotTransform {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a TrajectoryRecord>) -> Self {
        let (mut x0, mut x1, mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in records {
            x0 = x0.min(r.x);
            x1 = x1.max(r.x);
            z0 = z0.min(r.z);
            z1 = z1.max(r.z);
        }
        if !x0.is_finite() {
            return Self { min_x: -1.0, max_z: 1.0, scale: (CANVAS - 2.0 * MARGIN) / 2.0 };
        }
        let span = (x1 - x0).max(z1 - z0).max(1.0);
        let scale = (CANVAS - 2.0 * MARGIN) / span;
        Self { min_x: x0, max_z: z1, scale }
    }

    pub fn apply(&self, x: f64, z: f64) -> (f64, f64) {
        (MARGIN + (x - self.min_x) * self.scale, MARGIN + (self.max_z - z) * self.scale)
    }
}

fn tracks(records: &[TrajectoryRecord]) -> BTreeMap<u64, Vec<&TrajectoryRecord>> {
    let mut out: BTreeMap<u64, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.track_id).or_default().push(r);
    }
    for t in out.values_mut() {
        t.sort_by_key(|r| r.frame);
    }
    out
}

fn color(id: u64) -> &'static str {
    PALETTE[(id % PALETTE.len() as u64) as usize]
}

/// Ground truth as solid lines, hypotheses dashed, one color per track id.
pub fn bev_svg(gt: &[TrajectoryRecord], hyp: &[TrajectoryRecord]) -> String {
    let t = PlotTransform::fit(gt.iter().chain(hyp));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (layer, records, dash) in [("gt", gt, ""), ("hyp", hyp, r#" stroke-dasharray="6 4""#)] {
        let _ = writeln!(svg, r#"<g id="{layer}">"#);
        for (id, track) in tracks(records) {
            let points: Vec<String> = track
                .iter()
                .map(|r| {
                    let (u, v) = t.apply(r.x, r.z);
                    format!("{u:.3},{v:.3}")
                })
                .collect();
            let c = color(id);
            let _ = writeln!(
                svg,
                r#"<polyline data-track="{id}" points="{}" fill="none" stroke="{c}" stroke-width="2"{dash}/>"#,
                points.join(" ")
            );
            let (u, v) = t.apply(track[0].x, track[0].z);
            let _ = writeln!(svg, r#"<circle cx="{u:.3}" cy="{v:.3}" r="3" fill="{c}"/>"#);
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn trajectories_csv(gt: &[TrajectoryRecord], hyp: &[TrajectoryRecord]) -> String {
    let mut out = String::from("source,track_id,frame,x,z,yaw\n");
    for (source, records) in [("gt", gt), ("hyp", hyp)] {
        for track in tracks(records).values() {
            for r in track {
                let _ = writeln!(out, "{source},{},{},{:.6},{:.6},{:.6}", r.track_id, r.frame, r.x, r.z, r.yaw);
            }
        }
    }
    out
}
