//! Radar detection files: JSON lines (`{"frame": k, "r": .., "theta_deg": ..,
//! "v": .., "s": ..}`) or CSV with header `frame,r,theta_deg,v,s`.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::io::{BufRead, Read};
use std::path::Path;

use super::RadarDetection;
use crate::{Error, Result};

#[derive(Deserialize)]
struct DetectionRow {
    frame: i64,
    r: f64,
    theta_deg: f64,
    v: f64,
    s: f64,
}

impl DetectionRow {
    fn into_detection(self) -> Result<RadarDetection> {
        RadarDetection::new(self.r, self.theta_deg.to_radians(), self.v, self.s, self.frame)
    }
}

pub fn read_detections_jsonl(reader: impl BufRead) -> Result<Vec<RadarDetection>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DetectionRow = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        out.push(row.into_detection()?);
    }
    Ok(out)
}

pub fn read_detections_csv(reader: impl Read) -> Result<Vec<RadarDetection>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["frame", "r", "theta_deg", "v", "s"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!("CSV header must be {}", expected.join(","))));
    }
    rdr.deserialize::<DetectionRow>()
        .map(|row| row.map_err(Error::from).and_then(DetectionRow::into_detection))
        .collect()
}

/// Reads a detection file, choosing the format from the extension
/// (`.csv` is CSV, anything else JSON lines).
pub fn read_detections(path: &Path) -> Result<Vec<RadarDetection>> {
    let file = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_detections_csv(file),
        _ => read_detections_jsonl(std::io::BufReader::new(file)),
    }
}

/// Groups detections by frame index, frames in ascending order.
pub fn group_by_frame(dets: &[RadarDetection]) -> Vec<(i64, Vec<RadarDetection>)> {
    let mut map: BTreeMap<i64, Vec<RadarDetection>> = BTreeMap::new();
    for d in dets {
        map.entry(d.frame).or_default().push(*d);
    }
    map.into_iter().collect()
}
