//! Foreground pixel selection and temporal pixel correspondences.

use serde::{Deserialize, Serialize};

use crate::cues::DenseCueFrame;
use crate::image::Image;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.1;

/// Indices into a [`DenseCueFrame`]'s pixel arrays, strongest gradient first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelSampleSet {
    pub frame: usize,
    pub track_id: Option<u64>,
    pub indices: Vec<usize>,
}

impl PixelSampleSet {
    pub fn all(cues: &DenseCueFrame) -> Self {
        Self { frame: cues.frame, track_id: cues.track_id, indices: (0..cues.len()).collect() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Pairs of `(current index, previous index)` with their coordinate distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keeps only pairs whose current index is in `samples`.
    pub fn restricted_to(&self, samples: &PixelSampleSet) -> Self {
        let mut wanted = vec![false; samples.indices.iter().max().map_or(0, |m| m + 1)];
        for &i in &samples.indices {
            wanted[i] = true;
        }
        let mut out = Self::default();
        for (pair, d) in self.pairs.iter().zip(&self.distances) {
            if wanted.get(pair.0).copied().unwrap_or(false) {
                out.pairs.push(*pair);
                out.distances.push(*d);
            }
        }
        out
    }
}

/// Picks up to `budget` foreground pixels with the largest image gradient,
/// breaking ties by pixel index.
pub fn sample_pixels(cues: &DenseCueFrame, image: &Image, budget: usize) -> PixelSampleSet {
    let budget = budget.max(1);
    let mut scored: Vec<(f64, usize)> =
        (0..cues.len()).map(|i| (image.gradient_magnitude(&cues.pixel(i)), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    PixelSampleSet {
        frame: cues.frame,
        track_id: cues.track_id,
        indices: scored.into_iter().take(budget).map(|(_, i)| i).collect(),
    }
}

fn nearest(coord: &[f64; 3], candidates: &[[f64; 3]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in candidates.iter().enumerate() {
        let d2 = (0..3).map(|k| (coord[k] - c[k]).powi(2)).sum::<f64>();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((j, d2));
        }
    }
    best.map(|(j, d2)| (j, d2.sqrt()))
}

/// For every current pixel, the previous pixel nearest in local-coordinate
/// space; pairs farther than `threshold` meters are discarded.
pub fn match_coordinates(current: &DenseCueFrame, previous: &DenseCueFrame, threshold: f64) -> CorrespondenceSet {
    let mut out = CorrespondenceSet::default();
    for (i, c) in current.local_coords.iter().enumerate() {
        if let Some((j, d)) = nearest(c, &previous.local_coords) {
            if d <= threshold {
                out.pairs.push((i, j));
                out.distances.push(d);
            }
        }
    }
    out
}

/// Like [`match_coordinates`] but keeps a pair only when the current pixel is
/// also the previous pixel's nearest neighbour.
pub fn match_coordinates_mutual(
    current: &DenseCueFrame,
    previous: &DenseCueFrame,
    threshold: f64,
) -> CorrespondenceSet {
    let forward = match_coordinates(current, previous, threshold);
    let mut out = CorrespondenceSet::default();
    for (&(i, j), &d) in forward.pairs.iter().zip(&forward.distances) {
        if nearest(&previous.local_coords[j], &current.local_coords).map(|(back, _)| back) == Some(i) {
            out.pairs.push((i, j));
            out.distances.push(d);
        }
    }
    out
}
