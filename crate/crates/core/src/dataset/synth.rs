//! Synthetic highway scene generator.
//!
//! Produces kinematically smooth 10 Hz tracks whose maneuver labels are
//! known by construction: lane keepers hold a constant speed, lane changes
//! follow a quintic lateral profile over 4 s starting just after the anchor
//! time, merges start on a designated ramp lane (the rightmost, id
//! `lanes + 1`), and speed profiles realize the constant/speeding/slowing
//! classes with an acceleration step well above the labeling threshold.
//! With zero noise the labeler reproduces the intended classes exactly.

use super::{
    AccelManeuver, LocationManeuver, ManeuverLabel, PipelineConfig, SourceTag, TrackTable,
};
use crate::error::{Error, Result};
use crate::geometry::{estimate_headings, TrackPoint};
use crate::rng::Rng;
use std::collections::BTreeMap;

/// Fractions of vehicles per location-wise maneuver. They are weights, not
/// probabilities: counts are apportioned deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverMix {
    pub keep: f64,
    pub left: f64,
    pub right: f64,
    pub merge: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        ManeuverMix {
            keep: 0.4,
            left: 0.2,
            right: 0.2,
            merge: 0.2,
        }
    }
}

impl ManeuverMix {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "maneuver mix `{text}` must be keep:left:right:merge"
            )));
        }
        let mut vals = [0.0f64; 4];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| Error::Config(format!("bad mix component `{p}`")))?;
        }
        Ok(ManeuverMix {
            keep: vals[0],
            left: vals[1],
            right: vals[2],
            merge: vals[3],
        })
    }

    fn weights(&self) -> [f64; 4] {
        [self.keep, self.left, self.right, self.merge]
    }
}

/// Fractions of vehicles per acceleration-wise maneuver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelMix {
    pub constant: f64,
    pub speed: f64,
    pub slow: f64,
}

impl Default for AccelMix {
    fn default() -> Self {
        AccelMix {
            constant: 0.5,
            speed: 0.25,
            slow: 0.25,
        }
    }
}

impl AccelMix {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "accel mix `{text}` must be const:speed:slow"
            )));
        }
        let mut vals = [0.0f64; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| Error::Config(format!("bad mix component `{p}`")))?;
        }
        Ok(AccelMix {
            constant: vals[0],
            speed: vals[1],
            slow: vals[2],
        })
    }

    fn weights(&self) -> [f64; 3] {
        [self.constant, self.speed, self.slow]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Mainline lane count; lane ids 1..=lanes, ramp at lanes + 1.
    pub lanes: u32,
    pub vehicles: usize,
    pub mix: ManeuverMix,
    pub accel_mix: AccelMix,
    /// Gaussian position noise (m); zero gives exact-by-construction labels.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Recording length (s); the default fits exactly one anchor per track.
    pub duration_s: f64,
    pub speed_range: (f64, f64),
    /// Longitudinal acceleration magnitude of the speeding/slowing classes
    /// (m/s^2); must exceed the labeling threshold.
    pub accel_mag: f64,
    pub lane_width: f64,
    /// How far before the anchor a maneuver begins (s). Zero keeps all
    /// maneuver onset strictly after the anchor; positive values leak the
    /// intent into the observed history, which makes the labels separable
    /// from the inputs. Lateral drift before the anchor stays well under
    /// half a lane, so labels remain exact.
    pub maneuver_lead_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lanes: 4,
            vehicles: 32,
            mix: ManeuverMix::default(),
            accel_mix: AccelMix::default(),
            noise_sigma: 0.0,
            seed: 0,
            duration_s: 10.0,
            speed_range: (20.0, 30.0),
            accel_mag: 0.5,
            lane_width: 12.0 * crate::geometry::FEET_TO_METERS,
            maneuver_lead_s: 0.0,
        }
    }
}

const NATIVE_RATE: f64 = 10.0;
const ANCHOR_TIME_S: f64 = 3.0;
const LANE_CHANGE_DURATION_S: f64 = 4.0;

impl SynthConfig {
    pub fn onramp_lane(&self) -> u32 {
        self.lanes + 1
    }

    /// Pipeline configuration consistent with this scenario (the ramp lane
    /// id replaces the NGSIM default on-ramp set).
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            onramp_lanes: [self.onramp_lane()].into_iter().collect(),
            seed,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 lanes, got {}",
                self.lanes
            )));
        }
        if self.vehicles == 0 {
            return Err(Error::Config("need at least one vehicle".into()));
        }
        let w = self.mix.weights();
        if w.iter().any(|v| *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("maneuver mix must be non-negative and non-zero".into()));
        }
        let positive = w.iter().filter(|v| **v > 0.0).count();
        if positive > self.vehicles {
            return Err(Error::Config(format!(
                "infeasible mix: {positive} maneuver classes but only {} vehicles",
                self.vehicles
            )));
        }
        let aw = self.accel_mix.weights();
        if aw.iter().any(|v| *v < 0.0) || aw.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("accel mix must be non-negative and non-zero".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if self.duration_s < ANCHOR_TIME_S + 5.0 {
            return Err(Error::Config(format!(
                "duration {} s too short for one full scene (need >= 8 s)",
                self.duration_s
            )));
        }
        if self.speed_range.0 <= 0.0 || self.speed_range.1 < self.speed_range.0 {
            return Err(Error::Config("bad speed range".into()));
        }
        if self.accel_mag <= 0.0 {
            return Err(Error::Config("accel magnitude must be positive".into()));
        }
        if !(0.0..=1.5).contains(&self.maneuver_lead_s) {
            return Err(Error::Config(format!(
                "maneuver lead {} s outside [0, 1.5]; larger leads move the lane \
                 crossing before the anchor and break the labels",
                self.maneuver_lead_s
            )));
        }
        Ok(())
    }
}

pub struct SynthOutput {
    pub table: TrackTable,
    /// Intended label of each vehicle's first scene sample.
    pub intents: BTreeMap<u64, ManeuverLabel>,
}

/// Largest-remainder apportionment of `total` items over weights.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % weights.len()]] += 1;
    }
    counts
}

/// Quintic smoothstep: zero velocity and acceleration at both ends.
fn smoothstep(tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))
    }
}

fn smoothstep_deriv(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        0.0
    } else {
        30.0 * tau * tau * (1.0 - tau) * (1.0 - tau)
    }
}

#[derive(Debug, Clone, Copy)]
enum Intent {
    Keep,
    Left,
    Right,
    Merge,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);

    let counts = apportion(&cfg.mix.weights(), cfg.vehicles);
    let mut intents: Vec<Intent> = Vec::with_capacity(cfg.vehicles);
    for (intent, count) in [Intent::Keep, Intent::Left, Intent::Right, Intent::Merge]
        .into_iter()
        .zip(&counts)
    {
        intents.extend(std::iter::repeat_n(intent, *count));
    }
    rng.shuffle(&mut intents);

    let accel_counts = apportion(&cfg.accel_mix.weights(), cfg.vehicles);
    let mut accels: Vec<AccelManeuver> = Vec::with_capacity(cfg.vehicles);
    for (class, count) in [
        AccelManeuver::Const,
        AccelManeuver::Speed,
        AccelManeuver::Slow,
    ]
    .into_iter()
    .zip(&accel_counts)
    {
        accels.extend(std::iter::repeat_n(class, *count));
    }
    rng.shuffle(&mut accels);

    let frames_total = (cfg.duration_s * NATIVE_RATE).round() as u64 + 1;
    let lane_center = |lane: u32| (lane as f64 - 0.5) * cfg.lane_width;
    let max_lane = cfg.onramp_lane();
    let span = (cfg.vehicles as f64 * 15.0).max(90.0);

    let mut tracks = BTreeMap::new();
    let mut intent_labels = BTreeMap::new();

    for i in 0..cfg.vehicles {
        let vehicle_id = (i + 1) as u64;
        let intent = intents[i];
        let accel_class = accels[i];

        let (lane0, lane1) = match intent {
            Intent::Keep => {
                let l = 1 + rng.below(cfg.lanes as usize) as u32;
                (l, l)
            }
            Intent::Left => {
                let l = 2 + rng.below(cfg.lanes as usize - 1) as u32;
                (l, l - 1)
            }
            Intent::Right => {
                let l = 1 + rng.below(cfg.lanes as usize - 1) as u32;
                (l, l + 1)
            }
            Intent::Merge => (cfg.onramp_lane(), cfg.lanes),
        };
        let v0 = rng.uniform(cfg.speed_range.0, cfg.speed_range.1);
        let y0 = rng.uniform(0.0, span);
        // With a positive lead the maneuver onset is pinned just before the
        // anchor; otherwise it starts at a jittered delay after it.
        let jitter = rng.uniform(0.1, 0.6);
        let change_start = if cfg.maneuver_lead_s > 0.0 {
            ANCHOR_TIME_S - cfg.maneuver_lead_s
        } else {
            ANCHOR_TIME_S + jitter
        };
        let accel_start = ANCHOR_TIME_S - cfg.maneuver_lead_s;

        let accel = match accel_class {
            AccelManeuver::Const => 0.0,
            AccelManeuver::Speed => cfg.accel_mag,
            AccelManeuver::Slow => -cfg.accel_mag,
        };

        let x0 = lane_center(lane0);
        let x1 = lane_center(lane1);
        let mut points: Vec<TrackPoint> = Vec::with_capacity(frames_total as usize);
        for k in 0..frames_total {
            let t = k as f64 / NATIVE_RATE;

            // Longitudinal profile: constant speed until the acceleration
            // onset, then a constant-acceleration segment.
            let dt = (t - accel_start).max(0.0);
            let y = y0 + v0 * t + 0.5 * accel * dt * dt;
            let vy = v0 + accel * dt;
            let a_t = if t >= accel_start { accel } else { 0.0 };

            // Lateral profile.
            let tau = (t - change_start) / LANE_CHANGE_DURATION_S;
            let x = x0 + (x1 - x0) * smoothstep(tau);
            let vx = (x1 - x0) * smoothstep_deriv(tau) / LANE_CHANGE_DURATION_S;

            let (x, y) = if cfg.noise_sigma > 0.0 {
                (
                    x + rng.normal(0.0, cfg.noise_sigma),
                    y + rng.normal(0.0, cfg.noise_sigma),
                )
            } else {
                (x, y)
            };

            let lane = ((x / cfg.lane_width).floor() as i64 + 1).clamp(1, max_lane as i64) as u32;
            points.push(TrackPoint {
                t: k,
                x,
                y,
                v: vx.hypot(vy),
                a: a_t,
                lane,
                heading: 0.0,
            });
        }
        let headings = estimate_headings(&points);
        for (p, h) in points.iter_mut().zip(headings) {
            p.heading = h;
        }
        tracks.insert(vehicle_id, points);

        let (location, on_ramp) = match intent {
            Intent::Keep => (LocationManeuver::Keep, false),
            Intent::Left => (LocationManeuver::Left, false),
            Intent::Right => (LocationManeuver::Right, false),
            Intent::Merge => (LocationManeuver::Left, true),
        };
        intent_labels.insert(
            vehicle_id,
            ManeuverLabel {
                location,
                acceleration: accel_class,
                eval_class: ManeuverLabel::eval_class_for(location, on_ramp),
            },
        );
    }

    Ok(SynthOutput {
        table: TrackTable {
            tracks,
            source: SourceTag::Synthetic,
        },
        intents: intent_labels,
    })
}
