//! Scene segmentation: turn raw tracks into prediction instances.
//!
//! Tracks are chopped into consecutive segments of `segment_len` seconds;
//! each segment contributes one anchor, placed `t_h` after the segment
//! start, provided the full history and future windows are present at the
//! native rate. Frames are downsampled by taking every `downsample`-th
//! frame anchored at the anchor itself, so the anchor frame is part of the
//! history.

use super::{
    ManeuverLabel, NeighborHistory, PipelineConfig, SceneSample, TrackTable,
};
use crate::error::{Error, Result};
use crate::geometry::{FramePoint, RelativeFrame, Track};
use crate::pooling::{select_neighbors, NeighborCandidate};

fn frame_index(track: &Track, frame: u64) -> Option<usize> {
    track.binary_search_by_key(&frame, |p| p.t).ok()
}

/// Downsampled native frame ids of the history window ending at `anchor`.
fn history_frames(anchor: u64, cfg: &PipelineConfig) -> Vec<u64> {
    let span = cfg.history_span();
    let step = cfg.downsample as u64;
    (0..cfg.history_len() as u64)
        .map(|m| anchor - span + m * step)
        .collect()
}

/// Downsampled native frame ids of the future window after `anchor`.
fn future_frames(anchor: u64, cfg: &PipelineConfig) -> Vec<u64> {
    let step = cfg.downsample as u64;
    (1..=cfg.future_len() as u64).map(|k| anchor + k * step).collect()
}

fn collect_points(
    track: &Track,
    frames: &[u64],
    frame: &RelativeFrame,
) -> Result<Option<Vec<FramePoint>>> {
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        match frame_index(track, *f) {
            Some(i) => {
                let p = &track[i];
                out.push(FramePoint::from_world(p.x, p.y, p.v, p.heading, frame)?);
            }
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

/// Maneuver label of the scene anchored at `anchor_frame`.
///
/// Location: compare the lane id at the anchor against the lane id at the
/// end of the prediction horizon; ids increase left to right, so a lower id
/// means a left change. Acceleration: mean of the future accelerations
/// against the +-`accel_threshold` band. The evaluation class is `merge`
/// whenever the ego starts on a configured on-ramp lane.
pub fn label_maneuvers(
    track: &Track,
    anchor_frame: u64,
    cfg: &PipelineConfig,
) -> Result<ManeuverLabel> {
    use super::{AccelManeuver, LocationManeuver};

    let anchor_idx = frame_index(track, anchor_frame).ok_or_else(|| {
        Error::Data(format!("anchor frame {anchor_frame} missing from track"))
    })?;
    let lane_now = track[anchor_idx].lane;

    let end_frame = anchor_frame + cfg.future_span();
    let end_idx = frame_index(track, end_frame).ok_or_else(|| {
        Error::Data(format!(
            "future frame {end_frame} missing from track; cannot read lane ids"
        ))
    })?;
    let lane_end = track[end_idx].lane;

    let location = if lane_end < lane_now {
        LocationManeuver::Left
    } else if lane_end > lane_now {
        LocationManeuver::Right
    } else {
        LocationManeuver::Keep
    };

    let mut accel_sum = 0.0;
    let frames = future_frames(anchor_frame, cfg);
    for f in &frames {
        let i = frame_index(track, *f).ok_or_else(|| {
            Error::Data(format!("future frame {f} missing from track"))
        })?;
        accel_sum += track[i].a;
    }
    let mean_accel = accel_sum / frames.len() as f64;
    let acceleration = if mean_accel > cfg.accel_threshold {
        AccelManeuver::Speed
    } else if mean_accel < -cfg.accel_threshold {
        AccelManeuver::Slow
    } else {
        AccelManeuver::Const
    };

    let on_ramp = cfg.onramp_lanes.contains(&lane_now);
    Ok(ManeuverLabel {
        location,
        acceleration,
        eval_class: ManeuverLabel::eval_class_for(location, on_ramp),
    })
}

/// Build every scene sample of a track table. Vehicles without a full
/// history/future window simply yield nothing; neighbors lacking a full
/// history are dropped from the sample. Output is ordered by (vehicle id,
/// anchor frame).
pub fn segment_scenes(table: &TrackTable, cfg: &PipelineConfig) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    let hist_span = cfg.history_span();
    let fut_span = cfg.future_span();
    let stride = cfg.segment_stride();

    let mut samples = Vec::new();
    for (&vehicle_id, track) in &table.tracks {
        if track.is_empty() {
            continue;
        }
        let first = track[0].t;
        let last = track[track.len() - 1].t;
        let mut k = 0u64;
        loop {
            let anchor = first + k * stride + hist_span;
            if anchor + fut_span > last {
                break;
            }
            k += 1;
            let anchor_idx = match frame_index(track, anchor) {
                Some(i) => i,
                None => continue,
            };
            let ego_at_anchor = &track[anchor_idx];
            let frame = RelativeFrame::at(ego_at_anchor);

            let hist_ids = history_frames(anchor, cfg);
            let fut_ids = future_frames(anchor, cfg);
            let ego_history = match collect_points(track, &hist_ids, &frame)? {
                Some(points) => points,
                None => continue,
            };
            let future = match collect_points(track, &fut_ids, &frame)? {
                Some(points) => points,
                None => continue,
            };
            let label = label_maneuvers(track, anchor, cfg)?;

            // Candidate neighbors: any other vehicle present at the anchor.
            let mut candidates = Vec::new();
            for (&nb_id, nb_track) in &table.tracks {
                if nb_id == vehicle_id {
                    continue;
                }
                if let Some(i) = frame_index(nb_track, anchor) {
                    let p = &nb_track[i];
                    candidates.push(NeighborCandidate {
                        id: nb_id,
                        dx: p.x - frame.origin_x,
                        dy: p.y - frame.origin_y,
                        lane: p.lane,
                    });
                }
            }
            let mut neighbors = Vec::new();
            for cand in select_neighbors(&candidates, &cfg.neighborhood) {
                let nb_track = &table.tracks[&cand.id];
                if let Some(history) = collect_points(nb_track, &hist_ids, &frame)? {
                    neighbors.push(NeighborHistory {
                        id: cand.id,
                        lane: cand.lane,
                        history,
                    });
                }
            }

            samples.push(SceneSample {
                vehicle_id,
                anchor_frame: anchor,
                frame,
                ego_lane: ego_at_anchor.lane,
                ego_history,
                neighbors,
                future,
                label,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AccelManeuver, EvalClass, LocationManeuver, SourceTag};
    use crate::geometry::TrackPoint;
    use std::collections::BTreeMap;

    fn straight_track(frames: u64, lane: u32, v: f64) -> Track {
        (0..frames)
            .map(|t| TrackPoint {
                t,
                x: 1.8,
                y: v * t as f64 * 0.1,
                v,
                a: 0.0,
                lane,
                heading: std::f64::consts::FRAC_PI_2,
            })
            .collect()
    }

    fn table(tracks: Vec<(u64, Track)>) -> TrackTable {
        TrackTable {
            tracks: tracks.into_iter().collect::<BTreeMap<_, _>>(),
            source: SourceTag::Synthetic,
        }
    }

    #[test]
    fn exact_eight_seconds_yields_one_sample() {
        // 81 frames cover exactly 8 s at 10 Hz: anchor at the 3 s mark.
        let cfg = PipelineConfig::default();
        let t = table(vec![(1, straight_track(81, 2, 20.0))]);
        let samples = segment_scenes(&t, &cfg).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.anchor_frame, 30);
        assert_eq!(s.ego_history.len(), 16);
        assert_eq!(s.future.len(), 25);
        assert!(s.neighbors.is_empty());
        // History ends at the origin.
        let last = s.ego_history.last().unwrap();
        assert_eq!((last.dx, last.dy), (0.0, 0.0));
        assert_eq!((last.r, last.phi), (0.0, 0.0));
    }

    #[test]
    fn short_track_yields_nothing() {
        let cfg = PipelineConfig::default();
        let t = table(vec![(1, straight_track(20, 2, 20.0))]);
        assert!(segment_scenes(&t, &cfg).unwrap().is_empty());
    }

    #[test]
    fn late_neighbor_is_dropped() {
        let cfg = PipelineConfig::default();
        let ego = straight_track(81, 2, 20.0);
        // Neighbor appears at frame 20, i.e. 1 s before the anchor: it has
        // no full 3 s history and must be excluded.
        let nb: Track = (20..81)
            .map(|t| TrackPoint {
                t,
                x: 1.8,
                y: 20.0 * t as f64 * 0.1 + 10.0,
                v: 20.0,
                a: 0.0,
                lane: 2,
                heading: std::f64::consts::FRAC_PI_2,
            })
            .collect();
        let t = table(vec![(1, ego), (2, nb)]);
        let samples = segment_scenes(&t, &cfg).unwrap();
        // Vehicle 1's sample has no neighbors; vehicle 2 yields no samples.
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].vehicle_id, 1);
        assert!(samples[0].neighbors.is_empty());
    }

    #[test]
    fn full_history_neighbor_is_kept_with_relative_coords() {
        let cfg = PipelineConfig::default();
        let ego = straight_track(81, 2, 20.0);
        let nb: Track = (0..81)
            .map(|t| TrackPoint {
                t,
                x: 1.8,
                y: 20.0 * t as f64 * 0.1 + 10.0,
                v: 20.0,
                a: 0.0,
                lane: 2,
                heading: std::f64::consts::FRAC_PI_2,
            })
            .collect();
        let t = table(vec![(1, ego), (2, nb)]);
        let samples = segment_scenes(&t, &cfg).unwrap();
        let ego_sample = samples.iter().find(|s| s.vehicle_id == 1).unwrap();
        assert_eq!(ego_sample.neighbors.len(), 1);
        let nb_hist = &ego_sample.neighbors[0];
        assert_eq!(nb_hist.history.len(), 16);
        let at_anchor = nb_hist.at_anchor();
        assert!((at_anchor.dy - 10.0).abs() < 1e-12);
        assert!(at_anchor.dx.abs() < 1e-12);
    }

    #[test]
    fn label_keep_const() {
        let cfg = PipelineConfig::default();
        let track = straight_track(81, 3, 20.0);
        let label = label_maneuvers(&track, 30, &cfg).unwrap();
        assert_eq!(label.location, LocationManeuver::Keep);
        assert_eq!(label.acceleration, AccelManeuver::Const);
        assert_eq!(label.eval_class, EvalClass::Keep);
    }

    #[test]
    fn label_speed_above_threshold() {
        let cfg = PipelineConfig::default();
        let mut track = straight_track(81, 3, 20.0);
        for p in track.iter_mut() {
            p.a = 0.25;
        }
        let label = label_maneuvers(&track, 30, &cfg).unwrap();
        assert_eq!(label.acceleration, AccelManeuver::Speed);
    }

    #[test]
    fn label_left_change_from_lane_ids() {
        let cfg = PipelineConfig::default();
        let mut track = straight_track(81, 3, 20.0);
        for p in track.iter_mut().skip(60) {
            p.lane = 2;
        }
        let label = label_maneuvers(&track, 30, &cfg).unwrap();
        assert_eq!(label.location, LocationManeuver::Left);
        assert_eq!(label.eval_class, EvalClass::Left);
    }

    #[test]
    fn label_merge_from_onramp_lane() {
        let cfg = PipelineConfig::default();
        let mut track = straight_track(81, 7, 20.0);
        for p in track.iter_mut().skip(60) {
            p.lane = 6;
        }
        let label = label_maneuvers(&track, 30, &cfg).unwrap();
        assert_eq!(label.location, LocationManeuver::Left);
        assert_eq!(label.eval_class, EvalClass::Merge);
    }

    #[test]
    fn label_missing_future_is_data_error() {
        let cfg = PipelineConfig::default();
        let track = straight_track(50, 3, 20.0);
        assert!(label_maneuvers(&track, 30, &cfg).is_err());
    }

    #[test]
    fn two_segments_two_samples() {
        // 161 frames = two full 8 s segments.
        let cfg = PipelineConfig::default();
        let t = table(vec![(1, straight_track(161, 2, 20.0))]);
        let samples = segment_scenes(&t, &cfg).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].anchor_frame, 30);
        assert_eq!(samples[1].anchor_frame, 110);
    }
}
