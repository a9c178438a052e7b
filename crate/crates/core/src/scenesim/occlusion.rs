use std::collections::HashMap;

use crate::cues::DenseCueFrame;

/// Sampled-pixel z-buffer across the objects of one frame.
///
/// A pixel is removed when a pixel of a different object lies within
/// `radius` (Chebyshev distance) and is nearer to the camera. Per-pixel depth
/// is the initial box depth plus the local depth. Objects left without pixels
/// are dropped.
pub fn occlusion_cull(cues: Vec<DenseCueFrame>, radius: f64) -> Vec<DenseCueFrame> {
    if cues.len() < 2 {
        return cues.into_iter().filter(|c| !c.is_empty()).collect();
    }
    let cell = radius.max(1.0);
    let key = |u: f64, v: f64| ((u / cell).floor() as i64, (v / cell).floor() as i64);

    // (object, depth, pixel) bucketed by cell
    let mut grid: HashMap<(i64, i64), Vec<(usize, f64, [f64; 2])>> = HashMap::new();
    for (o, cue) in cues.iter().enumerate() {
        let z = cue.initial_box.state.position.z;
        for (p, d) in cue.pixels.iter().zip(&cue.local_depth) {
            grid.entry(key(p[0], p[1])).or_default().push((o, z + d, *p));
        }
    }

    let span = (radius / cell).ceil() as i64;
    let mut out = Vec::with_capacity(cues.len());
    for (o, mut cue) in cues.into_iter().enumerate() {
        let z = cue.initial_box.state.position.z;
        let keep: Vec<bool> = cue
            .pixels
            .iter()
            .zip(&cue.local_depth)
            .map(|(p, d)| {
                let depth = z + d;
                let (cx, cy) = key(p[0], p[1]);
                let occluded = (-span..=span).any(|dx| {
                    (-span..=span).any(|dy| {
                        grid.get(&(cx + dx, cy + dy)).is_some_and(|bucket| {
                            bucket.iter().any(|(other, od, q)| {
                                *other != o
                                    && *od < depth
                                    && (q[0] - p[0]).abs() <= radius
                                    && (q[1] - p[1]).abs() <= radius
                            })
                        })
                    })
                });
                !occluded
            })
            .collect();
        cue.retain_pixels(|i| keep[i]);
        if !cue.is_empty() {
            out.push(cue);
        }
    }
    out
}
