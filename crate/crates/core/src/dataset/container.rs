//! Scene-sample container file and the JSON split manifest.
//!
//! Container byte layout (integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MPSS"
//! 4       1     version byte (currently 1)
//! 5       2     history length H, u16
//! 7       2     future length F, u16
//! 9       4     sample count, u32
//! then per sample:
//!         8     vehicle id, u64
//!         8     anchor frame, u64
//!         24    frame origin (x, y, v), 3 x f64
//!         4     ego lane, u32
//!         3     label (location, acceleration, eval class), 3 x u8
//!         40*H  ego history, H frame points (dx, dy, r, phi, v_r), 5 x f64
//!         40*F  future, F frame points
//!         4     neighbor count, u32
//!         per neighbor:
//!             8     neighbor id, u64
//!             4     lane at anchor, u32
//!             40*H  history, H frame points
//! ```

use super::{
    AccelManeuver, EvalClass, LocationManeuver, ManeuverLabel, NeighborHistory, SceneSample,
};
use crate::error::{Error, Result};
use crate::geometry::{FramePoint, RelativeFrame};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"MPSS";
pub const VERSION: u8 = 1;

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_point<W: Write>(w: &mut W, p: &FramePoint) -> Result<()> {
    write_f64(w, p.dx)?;
    write_f64(w, p.dy)?;
    write_f64(w, p.r)?;
    write_f64(w, p.phi)?;
    write_f64(w, p.v_r)
}

fn location_byte(m: LocationManeuver) -> u8 {
    m.index() as u8
}

fn accel_byte(m: AccelManeuver) -> u8 {
    m.index() as u8
}

fn eval_byte(c: EvalClass) -> u8 {
    match c {
        EvalClass::Keep => 0,
        EvalClass::Merge => 1,
        EvalClass::Left => 2,
        EvalClass::Right => 3,
    }
}

fn eval_from_byte(b: u8) -> Result<EvalClass> {
    Ok(match b {
        0 => EvalClass::Keep,
        1 => EvalClass::Merge,
        2 => EvalClass::Left,
        3 => EvalClass::Right,
        other => return Err(Error::Format(format!("bad eval class byte {other}"))),
    })
}

pub fn write_samples<W: Write>(samples: &[SceneSample], mut w: W) -> Result<()> {
    let (h, f) = match samples.first() {
        Some(s) => (s.ego_history.len(), s.future.len()),
        None => (0, 0),
    };
    for s in samples {
        if s.ego_history.len() != h || s.future.len() != f {
            return Err(Error::Data(format!(
                "inconsistent sample shapes: expected H={h}, F={f}, sample ({}, {}) has H={}, F={}",
                s.vehicle_id,
                s.anchor_frame,
                s.ego_history.len(),
                s.future.len()
            )));
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(h as u16).to_le_bytes())?;
    w.write_all(&(f as u16).to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.vehicle_id.to_le_bytes())?;
        w.write_all(&s.anchor_frame.to_le_bytes())?;
        write_f64(&mut w, s.frame.origin_x)?;
        write_f64(&mut w, s.frame.origin_y)?;
        write_f64(&mut w, s.frame.origin_v)?;
        w.write_all(&s.ego_lane.to_le_bytes())?;
        w.write_all(&[
            location_byte(s.label.location),
            accel_byte(s.label.acceleration),
            eval_byte(s.label.eval_class),
        ])?;
        for p in &s.ego_history {
            write_point(&mut w, p)?;
        }
        for p in &s.future {
            write_point(&mut w, p)?;
        }
        w.write_all(&(s.neighbors.len() as u32).to_le_bytes())?;
        for nb in &s.neighbors {
            if nb.history.len() != h {
                return Err(Error::Data(format!(
                    "neighbor {} of sample ({}, {}) has {} history frames, expected {h}",
                    nb.id,
                    s.vehicle_id,
                    s.anchor_frame,
                    nb.history.len()
                )));
            }
            w.write_all(&nb.id.to_le_bytes())?;
            w.write_all(&nb.lane.to_le_bytes())?;
            for p in &nb.history {
                write_point(&mut w, p)?;
            }
        }
    }
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.inner.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn point(&mut self) -> Result<FramePoint> {
        Ok(FramePoint {
            dx: self.f64()?,
            dy: self.f64()?,
            r: self.f64()?,
            phi: self.f64()?,
            v_r: self.f64()?,
        })
    }

    fn points(&mut self, n: usize) -> Result<Vec<FramePoint>> {
        (0..n).map(|_| self.point()).collect()
    }
}

pub fn read_samples<R: Read>(inner: R) -> Result<Vec<SceneSample>> {
    let mut r = Reader { inner };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a sample container (magic {magic:02x?})"
        )));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported sample container version {version}"
        )));
    }
    let h = r.u16()? as usize;
    let f = r.u16()? as usize;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let vehicle_id = r.u64()?;
        let anchor_frame = r.u64()?;
        let frame = RelativeFrame {
            origin_x: r.f64()?,
            origin_y: r.f64()?,
            origin_v: r.f64()?,
        };
        let ego_lane = r.u32()?;
        let loc = r.u8()?;
        let acc = r.u8()?;
        let eval = r.u8()?;
        if loc > 2 || acc > 2 {
            return Err(Error::Format(format!("bad label bytes ({loc}, {acc})")));
        }
        let label = ManeuverLabel {
            location: LocationManeuver::from_index(loc as usize),
            acceleration: AccelManeuver::from_index(acc as usize),
            eval_class: eval_from_byte(eval)?,
        };
        let ego_history = r.points(h)?;
        let future = r.points(f)?;
        let n_neighbors = r.u32()? as usize;
        let mut neighbors = Vec::with_capacity(n_neighbors);
        for _ in 0..n_neighbors {
            let id = r.u64()?;
            let lane = r.u32()?;
            let history = r.points(h)?;
            neighbors.push(NeighborHistory { id, lane, history });
        }
        samples.push(SceneSample {
            vehicle_id,
            anchor_frame,
            frame,
            ego_lane,
            ego_history,
            neighbors,
            future,
            label,
        });
    }
    Ok(samples)
}

pub fn save_samples(samples: &[SceneSample], path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_samples(samples, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_samples(path: &std::path::Path) -> Result<Vec<SceneSample>> {
    let data = std::fs::read(path).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", path.display()))
    })?;
    read_samples(&data[..])
}

/// Sample id entry in the split manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRef {
    pub vehicle: u64,
    pub anchor: u64,
}

/// Which sample landed in which split, plus the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub train: Vec<SplitRef>,
    pub val: Vec<SplitRef>,
    pub test: Vec<SplitRef>,
}

impl SplitManifest {
    pub fn from_splits(
        seed: u64,
        train: &[SceneSample],
        val: &[SceneSample],
        test: &[SceneSample],
    ) -> Self {
        let refs = |xs: &[SceneSample]| {
            xs.iter()
                .map(|s| SplitRef {
                    vehicle: s.vehicle_id,
                    anchor: s.anchor_frame,
                })
                .collect()
        };
        SplitManifest {
            version: 1,
            seed,
            train: refs(train),
            val: refs(val),
            test: refs(test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(vehicle: u64, n_nb: usize) -> SceneSample {
        let point = |k: f64| FramePoint {
            dx: k,
            dy: 2.0 * k,
            r: k.abs(),
            phi: 0.1 * k,
            v_r: -k,
        };
        SceneSample {
            vehicle_id: vehicle,
            anchor_frame: 30,
            frame: RelativeFrame {
                origin_x: 1.0,
                origin_y: 2.0,
                origin_v: 20.0,
            },
            ego_lane: 3,
            ego_history: (0..16).map(|i| point(i as f64)).collect(),
            neighbors: (0..n_nb)
                .map(|j| NeighborHistory {
                    id: 100 + j as u64,
                    lane: 2,
                    history: (0..16).map(|i| point((i + j) as f64 + 0.5)).collect(),
                })
                .collect(),
            future: (0..25).map(|i| point(i as f64 - 3.0)).collect(),
            label: ManeuverLabel {
                location: LocationManeuver::Left,
                acceleration: AccelManeuver::Slow,
                eval_class: EvalClass::Merge,
            },
        }
    }

    #[test]
    fn round_trip_exact() {
        let samples = vec![sample(1, 0), sample(2, 3)];
        let mut buf = Vec::new();
        write_samples(&samples, &mut buf).unwrap();
        let back = read_samples(&buf[..]).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn writing_is_deterministic() {
        let samples = vec![sample(1, 2), sample(9, 1)];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_samples(&samples, &mut a).unwrap();
        write_samples(&samples, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_byte_is_checked() {
        let mut buf = Vec::new();
        write_samples(&[], &mut buf).unwrap();
        assert_eq!(buf[4], VERSION);
        buf[4] = 7;
        assert!(read_samples(&buf[..]).is_err());
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut bad = sample(1, 0);
        bad.future.pop();
        let samples = vec![sample(2, 0), bad];
        let mut buf = Vec::new();
        assert!(write_samples(&samples, &mut buf).is_err());
    }

    #[test]
    fn manifest_serializes() {
        let train = vec![sample(1, 0)];
        let manifest = SplitManifest::from_splits(7, &train, &[], &[]);
        let json = serde_json::to_string_pretty(&manifest).unwrap();
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(manifest, back);
        assert_eq!(back.train[0].vehicle, 1);
    }
}
