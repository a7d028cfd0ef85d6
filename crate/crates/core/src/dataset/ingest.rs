//! Trajectory table ingestion from CSV.
//!
//! Expected columns (header required): `vehicle_id, frame_id, local_x,
//! local_y, lane_id, velocity, acceleration`. The NGSIM names `Vehicle_ID,
//! Frame_ID, Local_X, Local_Y, Lane_ID, v_Vel, v_Acc` are accepted as
//! aliases; extra columns are ignored. Distances may be feet or meters;
//! everything is stored in meters.

use super::{SourceTag, TrackTable};
use crate::error::{Error, Result};
use crate::geometry::{estimate_headings, TrackPoint, FEET_TO_METERS};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Feet,
    Meters,
}

impl Units {
    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "feet" => Ok(Units::Feet),
            "meters" => Ok(Units::Meters),
            other => Err(Error::Usage(format!(
                "unknown units `{other}`; expected feet or meters"
            ))),
        }
    }

    fn distance_scale(&self) -> f64 {
        match self {
            Units::Feet => FEET_TO_METERS,
            Units::Meters => 1.0,
        }
    }
}

const COLUMNS: [(&str, &[&str]); 7] = [
    ("vehicle_id", &["vehicle_id"]),
    ("frame_id", &["frame_id"]),
    ("local_x", &["local_x"]),
    ("local_y", &["local_y"]),
    ("lane_id", &["lane_id"]),
    ("velocity", &["velocity", "v_vel"]),
    ("acceleration", &["acceleration", "v_acc"]),
];

fn source_from_path(path: &Path) -> SourceTag {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    if name.contains("us-101") || name.contains("us101") {
        SourceTag::Us101
    } else if name.contains("i-80") || name.contains("i80") {
        SourceTag::I80
    } else if name.contains("synth") {
        SourceTag::Synthetic
    } else {
        SourceTag::Unknown
    }
}

pub fn load_tracks(path: &Path, units: Units) -> Result<TrackTable> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    let reader = std::io::BufReader::new(file);
    parse_tracks(reader, units, source_from_path(path))
}

pub fn parse_tracks<R: BufRead>(reader: R, units: Units, source: SourceTag) -> Result<TrackTable> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::Data("empty file: missing header row".into())),
    };
    let names: Vec<String> = header
        .split(',')
        .map(|c| c.trim().to_lowercase())
        .collect();

    let mut index = [0usize; 7];
    for (slot, (canonical, aliases)) in COLUMNS.iter().enumerate() {
        match names
            .iter()
            .position(|n| aliases.iter().any(|a| a == n))
        {
            Some(i) => index[slot] = i,
            None => return Err(Error::MissingColumn((*canonical).into())),
        }
    }
    let scale = units.distance_scale();

    let mut rows: BTreeMap<u64, Vec<TrackPoint>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_f64 = |slot: usize, name: &str| -> Result<f64> {
            fields
                .get(index[slot])
                .ok_or_else(|| {
                    Error::Data(format!("line {}: too few fields", lineno + 2))
                })?
                .parse::<f64>()
                .map_err(|_| {
                    Error::Data(format!(
                        "line {}: cannot parse {name} value `{}`",
                        lineno + 2,
                        fields.get(index[slot]).unwrap_or(&"")
                    ))
                })
        };
        let vehicle = parse_f64(0, "vehicle_id")? as u64;
        let frame = parse_f64(1, "frame_id")? as u64;
        let x = parse_f64(2, "local_x")? * scale;
        let y = parse_f64(3, "local_y")? * scale;
        let lane_raw = parse_f64(4, "lane_id")?;
        let v = parse_f64(5, "velocity")? * scale;
        let a = parse_f64(6, "acceleration")? * scale;
        if lane_raw < 1.0 {
            return Err(Error::Data(format!(
                "line {}: lane id {lane_raw} below 1 for vehicle {vehicle}",
                lineno + 2
            )));
        }
        if v < 0.0 {
            return Err(Error::Data(format!(
                "line {}: negative speed {v} for vehicle {vehicle}",
                lineno + 2
            )));
        }
        if !(x.is_finite() && y.is_finite() && v.is_finite() && a.is_finite()) {
            return Err(Error::Data(format!(
                "line {}: non-finite value for vehicle {vehicle}",
                lineno + 2
            )));
        }
        rows.entry(vehicle).or_default().push(TrackPoint {
            t: frame,
            x,
            y,
            v,
            a,
            lane: lane_raw as u32,
            heading: 0.0,
        });
    }

    let mut tracks = BTreeMap::new();
    for (vehicle, mut points) in rows {
        points.sort_by_key(|p| p.t);
        for w in points.windows(2) {
            if w[0].t == w[1].t {
                return Err(Error::Data(format!(
                    "duplicate frame {} for vehicle {vehicle}",
                    w[0].t
                )));
            }
        }
        let headings = estimate_headings(&points);
        for (p, h) in points.iter_mut().zip(headings) {
            p.heading = h;
        }
        tracks.insert(vehicle, points);
    }
    Ok(TrackTable { tracks, source })
}

/// Render a track table back to the canonical CSV schema, in meters. The
/// float formatting round-trips exactly, so write-then-load is lossless.
pub fn write_tracks_csv<W: std::io::Write>(table: &TrackTable, mut w: W) -> Result<()> {
    writeln!(
        w,
        "vehicle_id,frame_id,local_x,local_y,lane_id,velocity,acceleration"
    )?;
    for (vehicle, track) in &table.tracks {
        for p in track {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                vehicle, p.t, p.x, p.y, p.lane, p.v, p.a
            )?;
        }
    }
    Ok(())
}
