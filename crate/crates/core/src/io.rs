//! JSON-lines records for trajectories, cues and solver logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Dimensions, ObjectState};
use crate::optim::SolveReport;
use crate::scenesim::Scenario;

/// One box of one trajectory at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub frame: usize,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub yaw: f64,
    pub converged: bool,
    pub cost: f64,
}

impl TrajectoryRecord {
    pub fn from_box(frame: usize, track_id: u64, b: &Box3D, converged: bool, cost: f64) -> Self {
        let p = b.state.position;
        let d = b.dimensions;
        Self { frame, track_id, x: p.x, y: p.y, z: p.z, w: d.w, h: d.h, l: d.l, yaw: b.state.yaw, converged, cost }
    }

    pub fn to_box(&self) -> Box3D {
        Box3D::new(ObjectState::new(self.x, self.y, self.z, self.yaw), Dimensions::new(self.w, self.h, self.l))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.z, self.w, self.h, self.l, self.yaw].iter().all(|v| v.is_finite());
        if finite && self.to_box().dimensions.is_valid() {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid box in record for track {} frame {}", self.track_id, self.frame)))
        }
    }
}

/// Solver report of one track at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveLogRecord {
    pub frame: usize,
    pub track_id: u64,
    pub report: SolveReport,
}

/// Ground-truth trajectories of a scenario, ordered by frame then id.
pub fn ground_truth_records(scenario: &Scenario) -> Vec<TrajectoryRecord> {
    (0..scenario.frames)
        .flat_map(|f| {
            scenario.ground_truth(f).into_iter().map(move |(id, b)| TrajectoryRecord::from_box(f, id, &b, true, 0.0))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one JSON value per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), items)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

/// Reads trajectory records and checks every box.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let records: Vec<TrajectoryRecord> = read_jsonl_file(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> TrajectoryRecord {
        TrajectoryRecord {
            frame: 3,
            track_id: 7,
            x: 1.0,
            y: 0.9,
            z: 12.5,
            w: 1.6,
            h: 1.5,
            l: 3.9,
            yaw: -0.3,
            converged: true,
            cost: 1.25,
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[record(), record()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: Vec<TrajectoryRecord> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![record(), record()]);
        let again = TrajectoryRecord::from_box(3, 7, &record().to_box(), true, 1.25);
        assert!((again.yaw - record().yaw).abs() < 1e-12);
        assert_eq!(TrajectoryRecord { yaw: record().yaw, ..again }, record());
    }

    #[test]
    fn unknown_fields_and_bad_lines_are_reported() {
        let text = "{\"frame\":0}\n";
        match read_jsonl::<TrajectoryRecord>(text.as_bytes()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut good = serde_json::to_value(record()).unwrap();
        good["extra"] = serde_json::json!(1);
        let text = format!("\n{}\n", good);
        match read_jsonl::<TrajectoryRecord>(text.as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_box_is_rejected() {
        let r = TrajectoryRecord { w: -1.0, ..record() };
        assert!(r.validate().is_err());
    }
}
