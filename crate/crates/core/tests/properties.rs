mod oracle;

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;

use fieldsync_core::color::{lab_to_srgb_checked, srgb_to_lab, temp_color, Rgb, TempColormap};
use fieldsync_core::fixtures::{record, record_at, scorch_schema};
use fieldsync_core::geo::{
    cell_history, cell_of, coverage, detect_anomalies, local_project, missing_cells,
    under_sampled_cells, AnomalyParams, CellLookup, GridSpec,
};
use fieldsync_core::model::{
    next_record_id, parse_schema, serialize_schema, validate_record, FieldKind, FieldSpec, Record,
    Schema,
};
use fieldsync_core::sim::{check_trace, random_scenario, replay_trace, run, RandomScenarioParams};
use fieldsync_core::sync::{SyncCursor, Tier, TierStore};
use fieldsync_core::view::{
    hud_project, wedge, HudProjection, Point, Side, ViewerPose, Viewport, WedgePlacement,
};
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec {
        origin_lat: 45.0,
        origin_lon: 7.0,
        cell_size_m: 25.0,
        rows: 4,
        cols: 6,
        target_per_cell: 2,
    }
}

fn arb_kind() -> impl Strategy<Value = FieldKind> {
    prop_oneof![
        Just(FieldKind::Numeric),
        Just(FieldKind::Text),
        Just(FieldKind::Time),
        Just(FieldKind::Gps),
        Just(FieldKind::Image),
    ]
}

fn arb_schema() -> impl Strategy<Value = Schema> {
    (
        "[a-z]{1,8}",
        1u32..50,
        prop::collection::btree_map("[a-z_]{1,10}", (arb_kind(), any::<bool>(), -1e6f64..1e6, 0f64..1e6, proptest::option::of("[a-z]{1,6}")), 1..6),
    )
        .prop_map(|(id, version, fields)| Schema {
            schema_id: id,
            version,
            fields: fields
                .into_iter()
                .map(|(name, (kind, required, lo, width, unit))| FieldSpec {
                    name,
                    kind,
                    unit,
                    required,
                    numeric_range: (kind == FieldKind::Numeric).then_some([lo, lo + width]),
                })
                .collect(),
        })
}

/// A batch of scorch records drawn from a small id space so stores overlap.
fn arb_batch() -> impl Strategy<Value = Vec<Record>> {
    prop::collection::vec((0usize..3, 0u64..8), 0..10).prop_map(|ids| {
        ids.into_iter()
            .map(|(d, c)| record(["a", "b", "c"][d], c, (d as f64) * 10.0 + c as f64))
            .collect()
    })
}

fn arb_point_record() -> impl Strategy<Value = Record> {
    (0u64..10_000, -40f64..200.0, -40f64..140.0, 0f64..100.0).prop_map(|(c, x, y, v)| {
        let g = grid();
        let (lat, lon) = g.unproject(x, y);
        record_at("p", c, v, lat, lon)
    })
}

fn store_of(batches: &[Vec<Record>]) -> TierStore {
    let mut s = TierStore::new(Tier::Edge, "s");
    for b in batches {
        s.merge(b).unwrap();
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schema_round_trip(schema in arb_schema()) {
        let back = parse_schema(&serialize_schema(&schema)).unwrap();
        prop_assert_eq!(back, schema);
    }

    #[test]
    fn validation_is_idempotent(v in 0f64..=100.0, lat in -90f64..=90.0, lon in -180f64..=180.0) {
        let s = scorch_schema();
        let r = validate_record(&s, record_at("d", 0, v, lat, lon).to_draft()).unwrap();
        let again = validate_record(&s, r.to_draft()).unwrap();
        prop_assert_eq!(again, r);
    }

    #[test]
    fn record_ids_never_repeat(device in "[a-zA-Z0-9_-]{1,12}", steps in prop::collection::vec(1i64..1000, 1..40)) {
        let mut last = -1i64;
        let mut seen = HashSet::new();
        for step in steps {
            let id = next_record_id(&device, last).unwrap();
            prop_assert!(seen.insert(id.to_string()));
            last += step;
        }
    }

    #[test]
    fn merge_is_a_set_union(batches in prop::collection::vec(arb_batch(), 1..6)) {
        // Batches here never conflict: payload is a function of the id.
        let forward = store_of(&batches);
        let mut rev = batches.clone();
        rev.reverse();
        let backward = store_of(&rev);
        prop_assert_eq!(forward.id_set(), backward.id_set());

        let want: HashSet<_> = batches.iter().flatten().map(|r| r.id.clone()).collect();
        prop_assert_eq!(forward.id_set(), want);

        // idempotence
        let mut again = forward.clone();
        let all: Vec<Record> = forward.iter().cloned().collect();
        prop_assert!(again.merge(&all).unwrap().is_empty());
        prop_assert_eq!(again.len(), forward.len());
    }

    #[test]
    fn merge_is_associative(a in arb_batch(), b in arb_batch(), c in arb_batch()) {
        // (a ∪ b) ∪ c against a ∪ (b ∪ c), with b ∪ c materialized as a store first
        let left = store_of(&[a.clone(), b.clone(), c.clone()]);
        let bc = store_of(&[b, c]);
        let bc_batch: Vec<Record> = bc.iter().cloned().collect();
        let right = store_of(&[a, bc_batch]);
        prop_assert_eq!(left.id_set(), right.id_set());
    }

    #[test]
    fn delta_with_returned_cursor_is_empty(batches in prop::collection::vec(arb_batch(), 1..5), start in 0u64..20) {
        let s = store_of(&batches);
        let cursor = SyncCursor { peer_store_id: "p".into(), last_seq_seen: start };
        let (batch, next) = s.delta_since(&cursor);
        let want = s.max_seq().saturating_sub(start);
        prop_assert_eq!(batch.len() as u64, want);
        let seqs: Vec<u64> = batch.iter().map(|r| s.seq_of(&r.id).unwrap()).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] + 1 == w[1]));
        let (again, _) = s.delta_since(&next);
        prop_assert!(again.is_empty());
    }

    #[test]
    fn coverage_matches_brute_force(records in prop::collection::vec(arb_point_record(), 0..80)) {
        let g = grid();
        let counts = coverage(&records, &g);
        let points: Vec<(f64, f64)> = records
            .iter()
            .map(|r| oracle::project(r.lat, r.lon, g.origin_lat, g.origin_lon))
            .collect();
        let (want, outside) = oracle::brute_force_counts(&points, g.rows, g.cols, g.cell_size_m);
        prop_assert_eq!(&counts.counts, &want);
        prop_assert_eq!(counts.out_of_bounds, outside);
        prop_assert_eq!(counts.total(), records.len() as u64);

        let missing: BTreeSet<_> = missing_cells(&counts).into_iter().collect();
        let covered: BTreeSet<_> = g.cells().filter(|c| counts.get(*c) > 0).collect();
        prop_assert!(missing.is_disjoint(&covered));
        prop_assert_eq!(missing.len() + covered.len(), g.cell_count());

        for d in under_sampled_cells(&counts, &g) {
            prop_assert_eq!(d.deficit, u64::from(g.target_per_cell) - want[d.cell.row][d.cell.col]);
        }
    }

    #[test]
    fn histories_partition_the_input(records in prop::collection::vec(arb_point_record(), 0..60)) {
        let g = grid();
        let mut seen: Vec<String> = Vec::new();
        for cell in g.cells() {
            let h = cell_history(&records, cell, &g);
            prop_assert!(h.windows(2).all(|w| w[0].ts > w[1].ts || (w[0].ts == w[1].ts && w[0].id <= w[1].id)));
            seen.extend(h.iter().map(|r| r.id.to_string()));
        }
        seen.extend(
            records
                .iter()
                .filter(|r| cell_of(r, &g) == CellLookup::OutOfBounds)
                .map(|r| r.id.to_string()),
        );
        let mut want: Vec<String> = records.iter().map(|r| r.id.to_string()).collect();
        seen.sort();
        want.sort();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn anomaly_flags_are_scale_invariant(
        values in prop::collection::vec((0f64..150.0, 0f64..150.0, 0.1f64..50.0), 3..40),
        scale in 0.01f64..100.0,
    ) {
        let g = grid();
        let schema = wide_schema();
        let build = |c: f64| -> Vec<Record> {
            values
                .iter()
                .enumerate()
                .map(|(i, (x, y, v))| {
                    let (lat, lon) = g.unproject(*x, *y);
                    record_at("q", i as u64, v * c, lat, lon)
                })
                .collect()
        };
        let params = AnomalyParams { field: "scorch".into(), z_threshold: 2.0 };
        let base: Vec<_> = detect_anomalies(&build(1.0), &g, &schema, &params).unwrap();
        let scaled: Vec<_> = detect_anomalies(&build(scale), &g, &schema, &params).unwrap();
        // Only values sitting on the threshold could legitimately differ by rounding.
        let near = |z: f64| (z - params.z_threshold).abs() < 1e-9;
        let a: BTreeSet<_> = base.iter().filter(|a| !near(a.robust_z)).map(|a| a.id.clone()).collect();
        let b: BTreeSet<_> = scaled.iter().filter(|a| !near(a.robust_z)).map(|a| a.id.clone()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn projection_is_affine(ax in -5e3f64..5e3, ay in -5e3f64..5e3, bx in -5e3f64..5e3, by in -5e3f64..5e3) {
        let g = grid();
        let (la, oa) = g.unproject(ax, ay);
        let (lb, ob) = g.unproject(bx, by);
        let (xa, ya) = local_project(la, oa, &g);
        let (xb, yb) = local_project(lb, ob, &g);
        // project(a) + project(b) - project(origin) == project(a + b - origin) in degree space
        let (xs, ys) = local_project(la + lb - g.origin_lat, oa + ob - g.origin_lon, &g);
        prop_assert!((xs - (xa + xb)).abs() < 1e-6);
        prop_assert!((ys - (ya + yb)).abs() < 1e-6);
        prop_assert_eq!(local_project(g.origin_lat, g.origin_lon, &g), (0.0, 0.0));
    }

    #[test]
    fn wedge_invariants(
        w in 20f64..400.0,
        h in 20f64..400.0,
        angle in 0f64..(2.0 * PI),
        reach in 0.001f64..9.9,
    ) {
        let vp = Viewport::new(w, h).unwrap();
        let c = vp.center();
        // start outside the viewport's circumscribed circle, up to ~10x max side away
        let r = 0.5 * w.hypot(h) + reach * w.max(h);
        let target = Point::new(c.x + r * angle.cos(), c.y + r * angle.sin());
        match wedge(target, &vp, Rgb::new(0.0, 0.0, 0.0)) {
            Ok(WedgePlacement::Wedge(g)) => {
                prop_assert_eq!(g.apex, target);
                prop_assert!((g.apex.distance(g.base_left) - g.leg_length).abs() < 1e-9);
                prop_assert!((g.apex.distance(g.base_right) - g.leg_length).abs() < 1e-9);
                prop_assert!(vp.strictly_contains(g.base_left));
                prop_assert!(vp.strictly_contains(g.base_right));
            }
            Ok(WedgePlacement::OnScreen) => prop_assert!(false, "target is off screen"),
            Err(_) => {}
        }
    }

    #[test]
    fn hud_side_and_ordering(b1 in -PI..PI, b2 in -PI..PI, fov in 0.2f64..3.0, dist in 1f64..800.0) {
        let g = grid();
        let viewer = ViewerPose::new(Point::new(50.0, 50.0), 0.3, fov).unwrap();
        let mark = |beta: f64| {
            let dir = viewer.heading + beta;
            let (lat, lon) = g.unproject(50.0 + dist * dir.sin(), 50.0 + dist * dir.cos());
            hud_project(&record_at("h", 0, 20.0, lat, lon), &viewer, &g, "scorch", [0.0, 100.0]).unwrap()
        };
        let (m1, m2) = (mark(b1), mark(b2));
        if let HudProjection::Mark(m) = &m1 {
            prop_assert!(b1.abs() > fov / 2.0 - 1e-9);
            prop_assert_eq!(m.side, if b1 < 0.0 { Side::Left } else { Side::Right });
            prop_assert!((0.0..=1.0).contains(&m.vertical_pos));
            prop_assert!(m.alpha > 0.0 && m.alpha <= 1.0);
        } else {
            prop_assert!(b1.abs() <= fov / 2.0 + 1e-9);
        }
        if let (HudProjection::Mark(x), HudProjection::Mark(y)) = (&m1, &m2) {
            if b1.abs() + 1e-9 < b2.abs() {
                prop_assert!(x.vertical_pos <= y.vertical_pos + 1e-12);
            }
        }
    }

    #[test]
    fn lab_round_trip(r in 0f64..=1.0, g in 0f64..=1.0, b in 0f64..=1.0) {
        let rgb = Rgb::new(r, g, b);
        let back = lab_to_srgb_checked(srgb_to_lab(rgb));
        prop_assert!(!back.clamped);
        for (x, y) in rgb.channels().iter().zip(back.rgb.channels()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let want = oracle::lab([r, g, b]);
        let got = srgb_to_lab(rgb);
        prop_assert!(oracle::delta_e(want, [got.l, got.a, got.b]) < 1e-6);
    }

    #[test]
    fn colormap_lightness_is_monotone(t1 in 0f64..=1.0, t2 in 0f64..=1.0) {
        let cm = TempColormap::default();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let l = |t: f64| oracle::lab(cm.at(t).channels())[0];
        let (l0, l1) = (l(0.0), l(1.0));
        let dir = (l1 - l0).signum();
        prop_assert!(dir * (l(hi) - l(lo)) >= -1e-9);
    }
}

fn wide_schema() -> Schema {
    // same shape as scorch, without a range, so scaled values stay valid
    let mut s = scorch_schema();
    s.fields[0].numeric_range = None;
    s
}

#[test]
fn colormap_midpoint_is_equidistant_in_lab() {
    let lab = |rgb: Rgb| oracle::lab(rgb.channels());
    let (a, m, b) = (lab(temp_color(0.0, [0.0, 1.0])), lab(temp_color(0.5, [0.0, 1.0])), lab(temp_color(1.0, [0.0, 1.0])));
    let (d1, d2) = (oracle::delta_e(a, m), oracle::delta_e(m, b));
    assert!((d1 - d2).abs() < 1e-9, "{d1} vs {d2}");
}

#[test]
fn colormap_endpoints_are_exact() {
    assert_eq!(temp_color(3.0, [3.0, 9.0]), TempColormap::BLUE);
    assert_eq!(temp_color(9.0, [3.0, 9.0]), TempColormap::RED);
}

#[test]
fn simulator_properties_hold_on_random_scenarios() {
    let schema = scorch_schema();
    for seed in 0..12 {
        let scenario = random_scenario(seed, &RandomScenarioParams::default(), &schema, "scorch");
        let first = run(scenario.clone()).unwrap();
        assert!(first.report.converged, "seed {seed}: {}", first.report);
        let report = check_trace(&first.trace);
        assert!(report.passed(), "seed {seed}: {report:?}");

        let second = run(scenario.clone()).unwrap();
        assert_eq!(first.trace.to_json_lines(), second.trace.to_json_lines());

        let replayed = replay_trace(&scenario, &first.trace).unwrap();
        let orig: Vec<Vec<String>> = first.stores().map(|s| s.ids().map(|i| i.to_string()).collect()).collect();
        let rebuilt: Vec<Vec<String>> = replayed.iter().map(|s| s.ids().map(|i| i.to_string()).collect()).collect();
        assert_eq!(orig, rebuilt, "seed {seed}");
    }
}
