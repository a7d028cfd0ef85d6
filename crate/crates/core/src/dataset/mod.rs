//! Trajectory dataset pipeline: ingestion, scene segmentation, maneuver
//! labeling, deterministic splits, and the synthetic highway generator.

pub mod container;
pub mod ingest;
pub mod segment;
pub mod synth;

pub use container::{
    load_samples, read_samples, save_samples, write_samples, SplitManifest, SplitRef,
};
pub use ingest::{load_tracks, parse_tracks, Units};
pub use segment::{label_maneuvers, segment_scenes};
pub use synth::{synth_generate, AccelMix, ManeuverMix, SynthConfig, SynthOutput};

use crate::error::{Error, Result};
use crate::geometry::{FramePoint, RelativeFrame, Track};
use crate::pooling::NeighborhoodConfig;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Origin of a track table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Us101,
    I80,
    Synthetic,
    Unknown,
}

/// All tracks of one recording, keyed by vehicle id. Frame indices are
/// strictly increasing within each track and (vehicle, frame) pairs are
/// unique; both are enforced at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTable {
    pub tracks: BTreeMap<u64, Track>,
    pub source: SourceTag,
}

/// Pipeline constants: horizons, rates, the acceleration threshold, split
/// ratios, and the lane-numbering conventions used by the labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// History horizon (s).
    pub t_h: f64,
    /// Prediction horizon (s).
    pub t_f: f64,
    /// Native recording rate (Hz).
    pub native_rate: u32,
    /// Keep every n-th frame.
    pub downsample: u32,
    /// Track segment length (s); one anchor per segment.
    pub segment_len: f64,
    /// Acceleration threshold separating const-speed from speeding/slowing
    /// (m/s^2).
    pub accel_threshold: f64,
    /// Train/val/test ratios.
    pub split: (f64, f64, f64),
    pub seed: u64,
    /// Lane ids treated as on-ramps for the merge evaluation class.
    pub onramp_lanes: BTreeSet<u32>,
    pub neighborhood: NeighborhoodConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            t_h: 3.0,
            t_f: 5.0,
            native_rate: 10,
            downsample: 2,
            segment_len: 8.0,
            accel_threshold: 0.2,
            split: (0.72, 0.10, 0.18),
            seed: 0,
            onramp_lanes: [7, 8].into_iter().collect(),
            neighborhood: NeighborhoodConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_h + self.t_f > self.segment_len + 1e-9 {
            return Err(Error::Config(format!(
                "t_h + t_f = {} exceeds segment length {}",
                self.t_h + self.t_f,
                self.segment_len
            )));
        }
        if self.downsample < 1 {
            return Err(Error::Config("downsample factor must be >= 1".into()));
        }
        let ratio_sum = self.split.0 + self.split.1 + self.split.2;
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios sum to {ratio_sum}, expected 1"
            )));
        }
        if self.split.0 < 0.0 || self.split.1 < 0.0 || self.split.2 < 0.0 {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        for (name, value) in [("t_h", self.t_h), ("t_f", self.t_f)] {
            let frames = value * self.native_rate as f64;
            if (frames - frames.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{name} = {value} s is not a whole number of frames at {} Hz",
                    self.native_rate
                )));
            }
        }
        self.neighborhood.validate()?;
        Ok(())
    }

    /// Native frames spanned by the history horizon (30 under defaults).
    pub fn history_span(&self) -> u64 {
        (self.t_h * self.native_rate as f64).round() as u64
    }

    /// Native frames spanned by the future horizon (50 under defaults).
    pub fn future_span(&self) -> u64 {
        (self.t_f * self.native_rate as f64).round() as u64
    }

    /// Anchor-to-anchor stride in native frames (80 under defaults).
    pub fn segment_stride(&self) -> u64 {
        (self.segment_len * self.native_rate as f64).round() as u64
    }

    /// History length in downsampled frames, anchor included (16).
    pub fn history_len(&self) -> usize {
        (self.history_span() / self.downsample as u64) as usize + 1
    }

    /// Future length in downsampled frames (25).
    pub fn future_len(&self) -> usize {
        (self.future_span() / self.downsample as u64) as usize
    }

    /// Effective rate after downsampling (5 Hz).
    pub fn effective_rate(&self) -> f64 {
        self.native_rate as f64 / self.downsample as f64
    }
}

/// Location-wise maneuver classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationManeuver {
    Keep,
    Left,
    Right,
}

impl LocationManeuver {
    pub fn index(&self) -> usize {
        match self {
            LocationManeuver::Keep => 0,
            LocationManeuver::Left => 1,
            LocationManeuver::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => LocationManeuver::Keep,
            1 => LocationManeuver::Left,
            2 => LocationManeuver::Right,
            _ => panic!("location maneuver index {i} out of range"),
        }
    }
}

/// Acceleration-wise maneuver classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelManeuver {
    Const,
    Speed,
    Slow,
}

impl AccelManeuver {
    pub fn index(&self) -> usize {
        match self {
            AccelManeuver::Const => 0,
            AccelManeuver::Speed => 1,
            AccelManeuver::Slow => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => AccelManeuver::Const,
            1 => AccelManeuver::Speed,
            2 => AccelManeuver::Slow,
            _ => panic!("acceleration maneuver index {i} out of range"),
        }
    }
}

/// Evaluation classes; `merge` overrides the location class when the ego
/// originates on an on-ramp lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalClass {
    Keep,
    Merge,
    Left,
    Right,
}

/// Joint maneuver annotation of one scene sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverLabel {
    pub location: LocationManeuver,
    pub acceleration: AccelManeuver,
    pub eval_class: EvalClass,
}

impl ManeuverLabel {
    pub fn eval_class_for(location: LocationManeuver, on_ramp: bool) -> EvalClass {
        if on_ramp {
            EvalClass::Merge
        } else {
            match location {
                LocationManeuver::Keep => EvalClass::Keep,
                LocationManeuver::Left => EvalClass::Left,
                LocationManeuver::Right => EvalClass::Right,
            }
        }
    }
}

/// A neighbor's identity and relative history within one scene sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborHistory {
    pub id: u64,
    /// Lane id at the anchor time.
    pub lane: u32,
    /// Exactly H frames, same timeline as the ego history.
    pub history: Vec<FramePoint>,
}

impl NeighborHistory {
    /// The neighbor's position at the anchor time.
    pub fn at_anchor(&self) -> &FramePoint {
        self.history.last().expect("neighbor history is non-empty")
    }
}

/// One prediction instance: ego history, neighbor histories, ground-truth
/// future (Cartesian and polar targets), and the maneuver label, all in the
/// relative frame planted at the ego's anchor position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub vehicle_id: u64,
    pub anchor_frame: u64,
    pub frame: RelativeFrame,
    /// Ego lane id at the anchor time.
    pub ego_lane: u32,
    /// Exactly H frames ending at the anchor.
    pub ego_history: Vec<FramePoint>,
    pub neighbors: Vec<NeighborHistory>,
    /// Exactly F frames after the anchor.
    pub future: Vec<FramePoint>,
    pub label: ManeuverLabel,
}

impl SceneSample {
    pub fn id(&self) -> (u64, u64) {
        (self.vehicle_id, self.anchor_frame)
    }
}

/// Deterministic shuffle-and-partition into train/val/test. Sizes are the
/// rounded ratios, clamped so they sum to the sample count.
pub fn split_dataset(
    mut samples: Vec<SceneSample>,
    cfg: &PipelineConfig,
) -> (Vec<SceneSample>, Vec<SceneSample>, Vec<SceneSample>) {
    samples.sort_by_key(|s| s.id());
    let mut rng = Rng::seed_from_u64(cfg.seed);
    rng.shuffle(&mut samples);
    let n = samples.len();
    let n_train = ((n as f64 * cfg.split.0).round() as usize).min(n);
    let n_val = ((n as f64 * cfg.split.1).round() as usize).min(n - n_train);
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    (samples, val, test)
}

/// Per-class sample counts, keyed by evaluation class and by the joint
/// (location, acceleration) pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub eval: BTreeMap<String, usize>,
    pub joint: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn class_histogram(samples: &[SceneSample]) -> ClassHistogram {
    let mut hist = ClassHistogram::default();
    for s in samples {
        let eval = format!("{:?}", s.label.eval_class).to_lowercase();
        *hist.eval.entry(eval).or_default() += 1;
        let joint = format!(
            "{:?}/{:?}",
            s.label.location, s.label.acceleration
        )
        .to_lowercase();
        *hist.joint.entry(joint).or_default() += 1;
        hist.total += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_sample(vehicle: u64, anchor: u64) -> SceneSample {
        SceneSample {
            vehicle_id: vehicle,
            anchor_frame: anchor,
            frame: RelativeFrame {
                origin_x: 0.0,
                origin_y: 0.0,
                origin_v: 0.0,
            },
            ego_lane: 1,
            ego_history: vec![],
            neighbors: vec![],
            future: vec![],
            label: ManeuverLabel {
                location: LocationManeuver::Keep,
                acceleration: AccelManeuver::Const,
                eval_class: EvalClass::Keep,
            },
        }
    }

    #[test]
    fn default_config_shapes() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.history_len(), 16);
        assert_eq!(cfg.future_len(), 25);
        assert_eq!(cfg.history_span(), 30);
        assert_eq!(cfg.future_span(), 50);
        assert_eq!(cfg.segment_stride(), 80);
        assert_eq!(cfg.effective_rate(), 5.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = PipelineConfig {
            segment_len: 7.0,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = PipelineConfig {
            split: (0.5, 0.3, 0.3),
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = PipelineConfig {
            downsample: 0,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_100_is_72_10_18() {
        let samples: Vec<SceneSample> = (0..100).map(|i| dummy_sample(i, 30)).collect();
        let cfg = PipelineConfig::default();
        let (train, val, test) = split_dataset(samples, &cfg);
        assert_eq!(train.len(), 72);
        assert_eq!(val.len(), 10);
        assert_eq!(test.len(), 18);
    }

    #[test]
    fn split_single_sample_goes_to_train() {
        let cfg = PipelineConfig::default();
        let (train, val, test) = split_dataset(vec![dummy_sample(1, 30)], &cfg);
        assert_eq!((train.len(), val.len(), test.len()), (1, 0, 0));
    }

    #[test]
    fn split_deterministic_and_partitioning() {
        let samples: Vec<SceneSample> = (0..37)
            .map(|i| dummy_sample(i % 7, 30 + i * 80))
            .collect();
        let cfg = PipelineConfig::default();
        let (t1, v1, s1) = split_dataset(samples.clone(), &cfg);
        let (t2, v2, s2) = split_dataset(samples.clone(), &cfg);
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert_eq!(s1, s2);

        let mut all: Vec<(u64, u64)> = t1
            .iter()
            .chain(&v1)
            .chain(&s1)
            .map(|s| s.id())
            .collect();
        all.sort_unstable();
        let mut expect: Vec<(u64, u64)> = samples.iter().map(|s| s.id()).collect();
        expect.sort_unstable();
        assert_eq!(all, expect);
    }

    #[test]
    fn histogram_counts_classes() {
        let mut a = dummy_sample(1, 30);
        a.label.eval_class = EvalClass::Merge;
        let b = dummy_sample(2, 30);
        let hist = class_histogram(&[a, b]);
        assert_eq!(hist.total, 2);
        assert_eq!(hist.eval["merge"], 1);
        assert_eq!(hist.eval["keep"], 1);
    }
}
