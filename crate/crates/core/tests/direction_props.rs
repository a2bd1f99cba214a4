use proptest::prelude::*;

use spectra_core::direction::{Compass, DirectionConfig, DirectionEstimator, FlowFrames, Radial};
use spectra_core::geometry::{BBox, FrameDims, Point};
use spectra_core::synth::{render_frame, GtBox};

fn square(cx: f64, cy: f64, side: f64) -> BBox {
    BBox::from_center(Point { x: cx, y: cy }, side, side).unwrap()
}

fn gt(b: BBox) -> GtBox {
    GtBox {
        object_id: 1,
        class_id: 0,
        class_name: "drone".into(),
        bbox: b,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Noise-free constant velocity, rendered frames, flow enabled.
    #[test]
    fn constant_velocity_heading(
        dir in 0usize..8,
        speed in 2.0f64..4.0,
        side in 12.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let dims = FrameDims::new(200, 200).unwrap();
        let compass = Compass::ALL[dir];
        let rad = compass.bearing().to_radians();
        let (vx, vy) = (rad.sin() * speed, -rad.cos() * speed);
        let frames = 30u64;
        let (sx, sy) = (100.0 - vx * frames as f64 / 2.0, 100.0 - vy * frames as f64 / 2.0);

        let cfg = DirectionConfig::default();
        let warmup = cfg.smoothing_window as u64;
        let mut est = DirectionEstimator::new(cfg);
        let mut prev = None;
        let (mut hits, mut total) = (0, 0);
        for f in 0..frames {
            let b = square(sx + vx * f as f64, sy + vy * f as f64, side);
            let img = render_frame(&[gt(b)], dims, seed ^ f);
            let ff = prev.as_ref().map(|p| FlowFrames { prev_index: f - 1, prev: p, cur: &img });
            let out = est.update(f, b, ff).unwrap();
            prop_assert!(est.last_work() <= est.work_bound());
            if f >= warmup {
                total += 1;
                if out.planar == Some(compass) {
                    hits += 1;
                }
            }
            prev = Some(img);
        }
        prop_assert!(hits * 10 >= total * 9, "{hits}/{total} for {compass:?}");
    }

    // Area doubles over 20 frames while the box stays put.
    #[test]
    fn linear_growth_approaches(
        a0 in 100.0f64..600.0,
        cx in 60.0f64..140.0,
        cy in 60.0f64..140.0,
    ) {
        let cfg = DirectionConfig::default();
        let warmup = cfg.smoothing_window as u64;
        let mut est = DirectionEstimator::new(cfg);
        let (mut hits, mut total) = (0, 0);
        for f in 0..=20u64 {
            let area = a0 * (1.0 + f as f64 / 20.0);
            let out = est.update(f, square(cx, cy, area.sqrt()), None).unwrap();
            if f >= warmup {
                total += 1;
                if out.radial == Radial::Approaching {
                    hits += 1;
                }
            }
        }
        prop_assert!(hits * 10 >= total * 9, "{hits}/{total}");
    }

    #[test]
    fn history_and_work_stay_bounded(len in 1u64..400, side in 4.0f64..30.0) {
        let mut est = DirectionEstimator::new(DirectionConfig::default());
        let cap = DirectionConfig::default().history_length;
        for f in 0..len {
            let out = est.update(f, square(50.0 + f as f64 * 0.1, 50.0, side), None).unwrap();
            prop_assert!(est.history().len() <= cap);
            prop_assert!(est.last_work() <= est.work_bound());
            prop_assert!((0.0..=1.0).contains(&out.confidence));
            prop_assert_eq!(out.planar.is_none(), out.heading_deg.is_none());
        }
    }
}
