//! Property tests for the geometry and pipeline invariants.

use mpool_core::geometry::{
    cartesian_to_polar, polar_to_cartesian, radial_velocity, RelativeFrame,
};
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    #[test]
    fn polar_round_trip(dx in -1e4f64..1e4, dy in -1e4f64..1e4) {
        let p = cartesian_to_polar(dx, dy);
        let (bx, by) = polar_to_cartesian(&p);
        prop_assert!((bx - dx).hypot(by - dy) < 1e-9);
    }

    #[test]
    fn polar_angle_range(dx in -1e4f64..1e4, dy in -1e4f64..1e4) {
        let p = cartesian_to_polar(dx, dy);
        prop_assert!(p.phi > -PI && p.phi <= PI);
        prop_assert!(p.r >= 0.0);
    }

    #[test]
    fn radial_velocity_bounded(
        v in 0.0f64..50.0,
        origin_v in 0.0f64..50.0,
        theta in -PI..PI,
        phi in -PI..PI,
    ) {
        let frame = RelativeFrame { origin_x: 0.0, origin_y: 0.0, origin_v };
        let vr = radial_velocity(v, theta, phi, &frame);
        prop_assert!(vr.abs() <= (v - origin_v).abs() + 1e-12);
    }

    #[test]
    fn translation_invariance(
        x in -500.0f64..500.0,
        y in -500.0f64..500.0,
        ox in -500.0f64..500.0,
        oy in -500.0f64..500.0,
        shift_x in -300.0f64..300.0,
        shift_y in -300.0f64..300.0,
    ) {
        let a = cartesian_to_polar(x - ox, y - oy);
        let b = cartesian_to_polar((x + shift_x) - (ox + shift_x), (y + shift_y) - (oy + shift_y));
        prop_assert!((a.r - b.r).abs() < 1e-9);
        // The angle may only differ when the point nearly coincides with
        // the origin and rounding flips the quadrant.
        if a.r > 1e-6 {
            prop_assert!((a.phi - b.phi).abs() < 1e-9);
        }
    }
}

mod splits {
    use mpool_core::dataset::{split_dataset, PipelineConfig, SceneSample};
    use proptest::prelude::*;

    fn sample(vehicle: u64, anchor: u64) -> SceneSample {
        use mpool_core::dataset::{AccelManeuver, EvalClass, LocationManeuver, ManeuverLabel};
        use mpool_core::geometry::RelativeFrame;
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

    proptest! {
        #[test]
        fn split_partitions_and_respects_ratios(n in 1usize..400, seed in 0u64..1000) {
            let samples: Vec<SceneSample> =
                (0..n).map(|i| sample(i as u64 / 3, 30 + 80 * (i as u64 % 3))).collect();
            let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
            let (train, val, test) = split_dataset(samples.clone(), &cfg);

            prop_assert_eq!(train.len() + val.len() + test.len(), n);
            prop_assert!((train.len() as f64 - 0.72 * n as f64).abs() <= 1.0);
            prop_assert!((val.len() as f64 - 0.10 * n as f64).abs() <= 1.0);

            let mut ids: Vec<(u64, u64)> = train
                .iter()
                .chain(&val)
                .chain(&test)
                .map(|s| s.id())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n, "splits overlap or drop samples");
        }
    }
}
