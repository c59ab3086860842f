use std::f64::consts::PI;

use proptest::prelude::*;

use sitechan::trace::{parse_trace, validate_trace, write_trace_to_string, MpcRecord, PathType, TraceSet};

fn arb_path_type() -> impl Strategy<Value = PathType> {
    prop_oneof![
        Just(PathType::Los),
        Just(PathType::Reflection),
        Just(PathType::Diffraction),
        Just(PathType::Scattering),
    ]
}

fn arb_record() -> impl Strategy<Value = MpcRecord> {
    (
        (0u32..20, 0u32..3, 0u32..3, 0u32..50, arb_path_type()),
        (0.0..1e-5f64, 0.0..1.0f64, -PI..PI),
        (-180.0..180.0f64, 0.0..=180.0f64, -180.0..180.0f64, 0.0..=180.0f64),
    )
        .prop_map(|((ti, tx_id, rx_id, path_id, path_type), (delay_s, gain_mag, phase_rad), angles)| MpcRecord {
            t: ti as f64 * 0.1,
            tx_id,
            rx_id,
            path_id,
            path_type,
            delay_s,
            gain_mag,
            phase_rad,
            aod_az_deg: angles.0,
            aod_zen_deg: angles.1,
            aoa_az_deg: angles.2,
            aoa_zen_deg: angles.3,
        })
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(records in prop::collection::vec(arb_record(), 0..60)) {
        let trace = TraceSet::from_records(records);
        let text = write_trace_to_string(&trace);
        let back = parse_trace(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(write_trace_to_string(&back), text);
    }

    #[test]
    fn parsing_keeps_path_order_within_snapshots(records in prop::collection::vec(arb_record(), 1..60)) {
        let text = write_trace_to_string(&TraceSet::from_records(records.clone()));
        let back = parse_trace(text.as_bytes()).unwrap();
        for snap in back.snapshots() {
            let expected: Vec<u32> = records
                .iter()
                .filter(|r| r.t == snap.t && r.link() == snap.link)
                .map(|r| r.path_id)
                .collect();
            let got: Vec<u32> = snap.records.iter().map(|r| r.path_id).collect();
            prop_assert_eq!(got, expected);
        }
    }
}

#[test]
fn validation_findings_survive_round_trip() {
    let rec = |t: f64, path_id, path_type| MpcRecord {
        t,
        tx_id: 0,
        rx_id: 1,
        path_id,
        path_type,
        delay_s: 1e-7,
        gain_mag: 1e-4,
        phase_rad: 0.0,
        aod_az_deg: 0.0,
        aod_zen_deg: 90.0,
        aoa_az_deg: -180.0,
        aoa_zen_deg: 90.0,
    };
    let trace = TraceSet::from_records(vec![
        rec(0.2, 0, PathType::Los),
        rec(0.2, 1, PathType::Los),
        rec(0.1, 0, PathType::Los),
    ]);
    let back = parse_trace(write_trace_to_string(&trace).as_bytes()).unwrap();
    let report = validate_trace(&back);
    assert_eq!(report, validate_trace(&trace));
    assert_eq!(report.violations.len(), 2);
}
