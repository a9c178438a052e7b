//! CLEAR-MOT evaluation of 3D trajectories.

mod hungarian;

pub use hungarian::assign;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid_distance, iou3d};
use crate::io::TrajectoryRecord;

/// Round-off allowance on thresholds, so identical boxes pass at IoU 1.
const ACCEPT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Iou3d,
    Distance,
}

/// How a hypothesis box is judged to hit a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySpec {
    pub kind: SimilarityKind,
    /// IoU ratio, or meters.
    pub threshold: f64,
}

impl SimilaritySpec {
    pub fn iou3d(threshold: f64) -> Self {
        Self { kind: SimilarityKind::Iou3d, threshold }
    }

    pub fn distance(meters: f64) -> Self {
        Self { kind: SimilarityKind::Distance, threshold: meters }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SimilarityKind::Iou3d => self.threshold > 0.0 && self.threshold <= 1.0,
            SimilarityKind::Distance => self.threshold > 0.0 && self.threshold.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid similarity threshold {self:?}")))
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            SimilarityKind::Iou3d => format!("iou3d@{}", self.threshold),
            SimilarityKind::Distance => format!("dist@{}m", self.threshold),
        }
    }

    fn score(&self, gt: &TrajectoryRecord, hyp: &TrajectoryRecord) -> f64 {
        match self.kind {
            SimilarityKind::Iou3d => iou3d(&gt.to_box(), &hyp.to_box()),
            SimilarityKind::Distance => centroid_distance(&gt.to_box(), &hyp.to_box()),
        }
    }

    fn accepts(&self, score: f64) -> bool {
        match self.kind {
            SimilarityKind::Iou3d => score >= self.threshold - ACCEPT_TOLERANCE,
            SimilarityKind::Distance => score <= self.threshold + ACCEPT_TOLERANCE,
        }
    }

    fn cost(&self, score: f64) -> f64 {
        match self.kind {
            SimilarityKind::Iou3d => -score,
            SimilarityKind::Distance => score,
        }
    }
}

/// CLEAR metrics. Percentages are in `[0, 100]` except MOTA, which is
/// unbounded below. Undefined ratios (empty denominators) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: Option<f64>,
    /// Mean IoU percent or mean distance in meters over true positives.
    pub motp: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mt: Option<f64>,
    pub ml: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    /// Ground-truth boxes over all frames.
    pub gt: usize,
    pub gt_tracks: usize,
}

impl MotReport {
    /// Whether MOTA equals `(1 - (FN + FP + IDS) / GT) * 100`.
    pub fn satisfies_mota_identity(&self) -> bool {
        match self.mota {
            None => self.gt == 0,
            Some(m) => {
                let expected = (1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.gt as f64) * 100.0;
                (m - expected).abs() <= 1e-9 * expected.abs().max(1.0)
            }
        }
    }
}

fn by_frame<'a>(records: &'a [TrajectoryRecord], what: &str) -> Result<BTreeMap<usize, Vec<&'a TrajectoryRecord>>> {
    let mut out: BTreeMap<usize, Vec<&TrajectoryRecord>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert((r.frame, r.track_id)) {
            return Err(Error::Contract(format!("{what}: track {} appears twice in frame {}", r.track_id, r.frame)));
        }
        out.entry(r.frame).or_default().push(r);
    }
    Ok(out)
}

fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Frame-by-frame CLEAR evaluation. Matches of the previous frame that still
/// pass the threshold are kept; the rest are assigned optimally.
pub fn evaluate(gt: &[TrajectoryRecord], hyp: &[TrajectoryRecord], sim: &SimilaritySpec) -> Result<MotReport> {
    sim.validate()?;
    let gt_frames = by_frame(gt, "ground truth")?;
    let hyp_frames = by_frame(hyp, "hypotheses")?;
    let frames: BTreeSet<usize> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();

    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut lifespan: BTreeMap<u64, usize> = BTreeMap::new();
    let mut tracked: HashMap<u64, usize> = HashMap::new();
    let (mut tp, mut fp, mut fn_, mut ids, mut total_gt) = (0, 0, 0, 0, 0);
    let mut similarity_sum = 0.0;
    let empty = Vec::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        total_gt += g.len();
        for r in g {
            *lifespan.entry(r.track_id).or_default() += 1;
        }
        let scores: Vec<Vec<f64>> = g.iter().map(|a| h.iter().map(|b| sim.score(a, b)).collect()).collect();

        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut matches = Vec::new();
        for (gi, a) in g.iter().enumerate() {
            let Some(&hid) = previous.get(&a.track_id) else { continue };
            if let Some(hi) = h.iter().position(|b| b.track_id == hid) {
                if !h_used[hi] && sim.accepts(scores[gi][hi]) {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    matches.push((gi, hi));
                }
            }
        }
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        let cost: Vec<Vec<Option<f64>>> = free_g
            .iter()
            .map(|&gi| {
                free_h
                    .iter()
                    .map(|&hi| {
                        let s = scores[gi][hi];
                        sim.accepts(s).then(|| sim.cost(s))
                    })
                    .collect()
            })
            .collect();
        matches.extend(assign(&cost).into_iter().map(|(r, c)| (free_g[r], free_h[c])));

        let mut current = HashMap::new();
        for &(gi, hi) in &matches {
            let (gid, hid) = (g[gi].track_id, h[hi].track_id);
            similarity_sum += scores[gi][hi];
            *tracked.entry(gid).or_default() += 1;
            if last.get(&gid).is_some_and(|&prev| prev != hid) {
                ids += 1;
            }
            last.insert(gid, hid);
            current.insert(gid, hid);
        }
        tp += matches.len();
        fp += h.len() - matches.len();
        fn_ += g.len() - matches.len();
        previous = current;
    }

    let gt_tracks = lifespan.len();
    let ratio = |id: &u64, span: &usize| tracked.get(id).copied().unwrap_or(0) as f64 / *span as f64;
    let mostly_tracked = lifespan.iter().filter(|(id, span)| ratio(id, span) >= 0.8).count();
    let mostly_lost = lifespan.iter().filter(|(id, span)| ratio(id, span) <= 0.2).count();
    let precision = percent(tp, tp + fp);
    let recall = percent(tp, total_gt);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let motp = (tp > 0).then(|| {
        let mean = similarity_sum / tp as f64;
        match sim.kind {
            SimilarityKind::Iou3d => 100.0 * mean,
            SimilarityKind::Distance => mean,
        }
    });
    Ok(MotReport {
        mota: (total_gt > 0).then(|| (1.0 - (fn_ + fp + ids) as f64 / total_gt as f64) * 100.0),
        motp,
        precision,
        recall,
        f1,
        mt: percent(mostly_tracked, gt_tracks),
        ml: percent(mostly_lost, gt_tracks),
        tp,
        fp,
        fn_,
        ids,
        gt: total_gt,
        gt_tracks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub run: String,
    pub similarity: SimilaritySpec,
    pub report: MotReport,
}

/// One report per `(run, similarity)`, runs in the given order, then similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 13] = ["run", "similarity", "MOTA", "MOTP", "precision", "recall", "F1", "MT", "ML", "FP", "FN", "IDS", "GT"];

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

impl AblationTable {
    fn cells(&self, digits: usize) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let m = &r.report;
                vec![
                    r.run.clone(),
                    r.similarity.label(),
                    cell(m.mota, digits),
                    cell(m.motp, digits),
                    cell(m.precision, digits),
                    cell(m.recall, digits),
                    cell(m.f1, digits),
                    cell(m.mt, digits),
                    cell(m.ml, digits),
                    m.fp.to_string(),
                    m.fn_.to_string(),
                    m.ids.to_string(),
                    m.gt.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for row in self.cells(6) {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Column-aligned plain text, two decimals.
    pub fn to_text(&self) -> String {
        let rows = self.cells(2);
        let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &COLUMNS.map(String::from));
        for row in &rows {
            line(&mut out, row);
        }
        out
    }

    pub fn mota(&self, run: &str, sim: &SimilaritySpec) -> Option<f64> {
        self.rows.iter().find(|r| r.run == run && r.similarity == *sim).and_then(|r| r.report.mota)
    }

    /// Whether MOTA strictly increases along `runs` under `sim`.
    pub fn strictly_increasing(&self, runs: &[&str], sim: &SimilaritySpec) -> bool {
        let values: Option<Vec<f64>> = runs.iter().map(|r| self.mota(r, sim)).collect();
        values.is_some_and(|v| v.windows(2).all(|w| w[0] < w[1]))
    }
}

pub fn ablation_table(
    runs: &[(String, Vec<TrajectoryRecord>)],
    gt: &[TrajectoryRecord],
    sims: &[SimilaritySpec],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, hyp) in runs {
        for sim in sims {
            rows.push(AblationRow { run: name.clone(), similarity: *sim, report: evaluate(gt, hyp, sim)? });
        }
    }
    Ok(AblationTable { rows })
}
