//! Property tests for format round-trips and the cleaning invariants.

use proptest::prelude::*;

use railtrace_core::geo::{haversine_distance, EarthModel, GeoCoord};
use railtrace_core::preprocess::{self, PreprocessConfig};
use railtrace_core::trace::{parse_trace_str, serialize_traces, BoardEvent, GpsPoint, Trace};

const EARTH: EarthModel = EarthModel { radius_km: 6373.0 };

fn arb_event() -> impl Strategy<Value = Option<BoardEvent>> {
    prop_oneof![
        3 => Just(None),
        1 => Just(Some(BoardEvent::Board)),
        1 => Just(Some(BoardEvent::Alight)),
    ]
}

fn arb_point(device: String) -> impl Strategy<Value = GpsPoint> {
    (
        1i64..10_000_000_000_000,
        -90.0f64..90.0,
        -180.0f64..180.0,
        proptest::option::of(0.0f64..60.0),
        arb_event(),
    )
        .prop_map(move |(t_ms, lat, lon, speed, event)| GpsPoint {
            device_id: device.clone(),
            t_ms,
            coord: GeoCoord::new(lat, lon).unwrap(),
            speed,
            event,
        })
}

fn arb_trace() -> impl Strategy<Value = Trace> {
    ("[a-z]{1,8}", 0usize..40).prop_flat_map(|(device, n)| {
        proptest::collection::vec(arb_point(device.clone()), n).prop_map(move |mut points| {
            points.sort_by_key(|p| p.t_ms);
            Trace { device_id: device.clone(), points }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_bit_exact(trace in arb_trace()) {
        prop_assume!(!trace.points.is_empty());
        let csv = serialize_traces(std::slice::from_ref(&trace));
        let (parsed, report) = parse_trace_str(&csv).unwrap();
        prop_assert_eq!(report.bad_lines, 0);
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0], &trace);
    }

    #[test]
    fn haversine_is_a_semimetric(
        lat1 in -89.9f64..89.9, lon1 in -179.9f64..179.9,
        lat2 in -89.9f64..89.9, lon2 in -179.9f64..179.9,
    ) {
        let a = GeoCoord::new(lat1, lon1).unwrap();
        let b = GeoCoord::new(lat2, lon2).unwrap();
        let dab = haversine_distance(a, b, EARTH);
        prop_assert!(dab >= 0.0);
        prop_assert_eq!(dab, haversine_distance(b, a, EARTH));
        prop_assert_eq!(haversine_distance(a, a, EARTH), 0.0);
    }

    #[test]
    fn preprocessing_never_grows_and_preserves_order(
        trace in arb_trace(),
        window in 1usize..6,
        minpts in 1usize..6,
    ) {
        let config = PreprocessConfig {
            window,
            db_minpts: minpts,
            ..PreprocessConfig::default()
        };
        let (clean, report) = preprocess::preprocess(&trace, &config).unwrap();
        prop_assert!(clean.points.len() <= trace.points.len());
        prop_assert!(clean.points.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
        prop_assert_eq!(report.output_points, clean.points.len());
        if !trace.points.is_empty() {
            let r = report.retention_ratio.unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
        // pure function: a second run agrees
        let again = preprocess::preprocess(&trace, &config).unwrap();
        prop_assert_eq!(again.0, clean);
    }

    #[test]
    fn dedup_is_idempotent(trace in arb_trace()) {
        let (once, _) = preprocess::phase3_dedup(&trace.points, 1e-5, 5000);
        let (twice, removed) = preprocess::phase3_dedup(&once, 1e-5, 5000);
        prop_assert_eq!(removed, 0);
        prop_assert_eq!(once, twice);
    }
}
