//! Relative frames of reference and the polar trajectory representation.
//!
//! All positions are in meters, lateral `x` across lanes and longitudinal
//! `y` along the road. A scene is expressed relative to a stationary frame
//! planted at the ego vehicle's position at the anchor time; polar
//! coordinates and radial velocities are measured against that origin.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// NGSIM distances come in feet; everything downstream is meters.
pub const FEET_TO_METERS: f64 = 0.3048;

/// Displacements below this are treated as stationary when estimating
/// headings; raw trajectory positions are too noisy to orient a stopped car.
pub const HEADING_STATIONARY_EPS_M: f64 = 0.01;

/// One timestamped kinematic record of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    /// Frame index at the native rate (10 Hz).
    pub t: u64,
    /// Lateral position (m).
    pub x: f64,
    /// Longitudinal position (m).
    pub y: f64,
    /// Linear speed (m/s), non-negative.
    pub v: f64,
    /// Longitudinal acceleration (m/s^2).
    pub a: f64,
    /// Lane identifier; ids increase left to right.
    pub lane: u32,
    /// Orientation angle in the world frame (rad), in (-pi, pi].
    pub heading: f64,
}

/// A vehicle's time-ordered sequence of track points.
pub type Track = Vec<TrackPoint>;

/// A position relative to the frame origin, in polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    /// Radial distance from the origin (m), >= 0.
    pub r: f64,
    /// Angle (rad) in (-pi, pi]; zero when `r` is zero.
    pub phi: f64,
    /// Radial velocity (m/s), when known.
    pub v_r: Option<f64>,
}

/// Stationary frame of reference fixed at the ego vehicle's position and
/// speed at the anchor time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeFrame {
    pub origin_x: f64,
    pub origin_y: f64,
    /// Ego linear speed at the anchor time (m/s).
    pub origin_v: f64,
}

impl RelativeFrame {
    pub fn at(point: &TrackPoint) -> Self {
        RelativeFrame {
            origin_x: point.x,
            origin_y: point.y,
            origin_v: point.v,
        }
    }
}

/// One track point expressed in a [`RelativeFrame`]: Cartesian displacement,
/// the matching polar coordinates, and the radial velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub dx: f64,
    pub dy: f64,
    pub r: f64,
    pub phi: f64,
    pub v_r: f64,
}

impl FramePoint {
    /// Express a vehicle state (world position, speed, heading) in `frame`.
    pub fn from_world(
        x: f64,
        y: f64,
        v: f64,
        heading: f64,
        frame: &RelativeFrame,
    ) -> Result<FramePoint> {
        let probe = TrackPoint {
            t: 0,
            x,
            y,
            v,
            a: 0.0,
            lane: 1,
            heading,
        };
        let (dx, dy) = to_relative(&probe, frame)?;
        let polar = cartesian_to_polar(dx, dy);
        let v_r = radial_velocity(v, heading, polar.phi, frame);
        Ok(FramePoint {
            dx,
            dy,
            r: polar.r,
            phi: polar.phi,
            v_r,
        })
    }
}

/// Relative displacement of `point` w.r.t. the frame origin.
pub fn to_relative(point: &TrackPoint, frame: &RelativeFrame) -> Result<(f64, f64)> {
    if !point.x.is_finite()
        || !point.y.is_finite()
        || !frame.origin_x.is_finite()
        || !frame.origin_y.is_finite()
    {
        return Err(Error::InvalidInput(format!(
            "non-finite coordinates: point ({}, {}), origin ({}, {})",
            point.x, point.y, frame.origin_x, frame.origin_y
        )));
    }
    Ok((point.x - frame.origin_x, point.y - frame.origin_y))
}

/// Cartesian displacement to polar, with the full-quadrant arctangent.
///
/// The origin maps to `r = 0, phi = 0`; the angle is kept in (-pi, pi], so
/// a point on the negative x axis gets `phi = +pi`.
pub fn cartesian_to_polar(dx: f64, dy: f64) -> PolarPoint {
    let r = dx.hypot(dy);
    let phi = if r == 0.0 {
        0.0
    } else {
        let a = dy.atan2(dx);
        // atan2(-0.0, dx<0) lands on -pi; fold onto the (-pi, pi] branch.
        if a == -PI {
            PI
        } else {
            a
        }
    };
    PolarPoint { r, phi, v_r: None }
}

/// Inverse of [`cartesian_to_polar`] (radial velocity is ignored).
pub fn polar_to_cartesian(p: &PolarPoint) -> (f64, f64) {
    (p.r * p.phi.cos(), p.r * p.phi.sin())
}

/// Heading at frame index `j` of a track, from position finite differences.
///
/// A displacement below [`HEADING_STATIONARY_EPS_M`] carries the previous
/// heading forward; the heading at index 0 defaults to the lane direction
/// (+y, i.e. pi/2).
pub fn estimate_heading(track: &Track, j: usize) -> Result<f64> {
    if track.is_empty() {
        return Err(Error::InvalidInput("empty track".into()));
    }
    if j >= track.len() {
        return Err(Error::InvalidInput(format!(
            "frame index {j} out of bounds for track of length {}",
            track.len()
        )));
    }
    Ok(estimate_headings(&track[..=j])[j])
}

/// Headings for every frame of a track in one pass; same rules as
/// [`estimate_heading`].
pub fn estimate_headings(points: &[TrackPoint]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut prev = FRAC_PI_2;
    for (i, p) in points.iter().enumerate() {
        let theta = if i == 0 {
            FRAC_PI_2
        } else {
            let dx = p.x - points[i - 1].x;
            let dy = p.y - points[i - 1].y;
            if dx.hypot(dy) < HEADING_STATIONARY_EPS_M {
                prev
            } else {
                let a = dy.atan2(dx);
                if a == -PI {
                    PI
                } else {
                    a
                }
            }
        };
        out.push(theta);
        prev = theta;
    }
    out
}

/// Radial velocity of a vehicle moving at speed `v` with heading `theta`,
/// seen at polar angle `phi` from the frame origin.
///
/// The speed is taken relative to the ego speed at the origin as a scalar
/// difference; the direction factor is carried entirely by `cos(theta - phi)`.
pub fn radial_velocity(v: f64, theta: f64, phi: f64, frame: &RelativeFrame) -> f64 {
    let v_rel = v - frame.origin_v;
    v_rel * (theta - phi).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> TrackPoint {
        TrackPoint {
            t: 0,
            x,
            y,
            v: 0.0,
            a: 0.0,
            lane: 1,
            heading: FRAC_PI_2,
        }
    }

    #[test]
    fn relative_identity_at_origin() {
        let frame = RelativeFrame {
            origin_x: 2.0,
            origin_y: 10.0,
            origin_v: 0.0,
        };
        assert_eq!(to_relative(&pt(2.0, 10.0), &frame).unwrap(), (0.0, 0.0));
        assert_eq!(to_relative(&pt(5.0, 20.0), &frame).unwrap(), (3.0, 10.0));
    }

    #[test]
    fn relative_translation_invariance() {
        let frame = RelativeFrame {
            origin_x: 2.0,
            origin_y: 10.0,
            origin_v: 0.0,
        };
        let shifted = RelativeFrame {
            origin_x: 2.0 + 7.0,
            origin_y: 10.0 - 3.0,
            origin_v: 0.0,
        };
        let base = to_relative(&pt(5.0, 20.0), &frame).unwrap();
        let moved = to_relative(&pt(5.0 + 7.0, 20.0 - 3.0), &shifted).unwrap();
        assert!((base.0 - moved.0).abs() < 1e-12);
        assert!((base.1 - moved.1).abs() < 1e-12);
    }

    #[test]
    fn relative_rejects_non_finite() {
        let frame = RelativeFrame {
            origin_x: 0.0,
            origin_y: 0.0,
            origin_v: 0.0,
        };
        assert!(to_relative(&pt(f64::NAN, 0.0), &frame).is_err());
        assert!(to_relative(&pt(0.0, f64::INFINITY), &frame).is_err());
    }

    #[test]
    fn polar_origin_convention() {
        let p = cartesian_to_polar(0.0, 0.0);
        assert_eq!(p.r, 0.0);
        assert_eq!(p.phi, 0.0);
    }

    #[test]
    fn polar_3_4_5() {
        let p = cartesian_to_polar(3.0, 4.0);
        assert!((p.r - 5.0).abs() < 1e-12);
        assert!((p.phi - (4.0f64 / 3.0).atan()).abs() < 1e-12);
    }

    #[test]
    fn polar_branch_cut_is_positive_pi() {
        let p = cartesian_to_polar(-1.0, 0.0);
        assert!((p.r - 1.0).abs() < 1e-12);
        assert_eq!(p.phi, PI);
        let q = cartesian_to_polar(-1.0, -0.0);
        assert_eq!(q.phi, PI);
    }

    #[test]
    fn polar_round_trip_examples() {
        let p = PolarPoint {
            r: 0.0,
            phi: 0.0,
            v_r: None,
        };
        assert_eq!(polar_to_cartesian(&p), (0.0, 0.0));

        let p = cartesian_to_polar(3.0, 4.0);
        let (dx, dy) = polar_to_cartesian(&p);
        assert!((dx - 3.0).abs() < 1e-9);
        assert!((dy - 4.0).abs() < 1e-9);
    }

    #[test]
    fn heading_straight_up() {
        let track: Track = vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(0.0, 2.0)];
        assert!((estimate_heading(&track, 2).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn heading_carry_forward_when_stationary() {
        let track: Track = vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(0.0, 1.0 + 0.001)];
        // Last displacement is below the stationarity threshold.
        assert!((estimate_heading(&track, 2).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn heading_diagonal() {
        let track: Track = vec![pt(0.0, 0.0), pt(1.0, 1.0)];
        assert!((estimate_heading(&track, 1).unwrap() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn heading_at_zero_is_lane_direction() {
        let track: Track = vec![pt(3.0, 9.0)];
        assert_eq!(estimate_heading(&track, 0).unwrap(), FRAC_PI_2);
    }

    #[test]
    fn heading_empty_track_errors() {
        let track: Track = vec![];
        assert!(estimate_heading(&track, 0).is_err());
    }

    #[test]
    fn radial_velocity_identities() {
        let frame = RelativeFrame {
            origin_x: 0.0,
            origin_y: 0.0,
            origin_v: 0.0,
        };
        // Aligned: cos 0 = 1.
        assert!((radial_velocity(2.0, 0.7, 0.7, &frame) - 2.0).abs() < 1e-12);
        // Orthogonal: cos(pi/2) = 0.
        assert!(radial_velocity(5.0, FRAC_PI_2, 0.0, &frame).abs() < 1e-12);
        // 60 degrees: cos(pi/3) = 0.5.
        assert!((radial_velocity(2.0, PI / 3.0, 0.0, &frame) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radial_velocity_relative_to_origin_speed() {
        let frame = RelativeFrame {
            origin_x: 0.0,
            origin_y: 0.0,
            origin_v: 3.0,
        };
        assert!((radial_velocity(5.0, 0.0, 0.0, &frame) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radial_velocity_bounded_by_relative_speed() {
        let frame = RelativeFrame {
            origin_x: 0.0,
            origin_y: 0.0,
            origin_v: 1.0,
        };
        for i in 0..100 {
            let theta = -PI + (i as f64) * 0.063;
            let v = 4.0;
            let vr = radial_velocity(v, theta, 0.3, &frame);
            assert!(vr.abs() <= (v - 1.0).abs() + 1e-12);
        }
    }
}
