use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::utility::AppClass;

const MINIMAL: &str = r#"{
  "topology": { "links": [ { "from": "a", "to": "b", "capacity_kbps": 10000, "delay_ms": 4 } ] },
  "applications": [ { "class": "ssh", "count": 1, "src": "a", "dst": "b" } ]
}"#;

fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    parse_scenario(text, Path::new("."))
}

/// A short single-link scenario that simulates quickly.
fn quick(totals: &[usize]) -> Scenario {
    let sweep = if totals.is_empty() {
        String::new()
    } else {
        format!(r#", "sweep": {{ "totals": {totals:?} }}"#)
    };
    let text = format!(
        r#"{{
  "name": "quick",
  "seed": 11,
  "topology": {{ "links": [ {{ "from": "a", "to": "b", "capacity_kbps": 20000, "delay_ms": 3 }} ] }},
  "applications": [
    {{ "class": "ssh", "count": 1, "src": "a", "dst": "b" }},
    {{ "class": "voip", "count": 1, "src": "a", "dst": "b" }}
  ],
  "solver": {{ "per_type_equal": true }},
  "sim": {{ "duration_s": 3, "warmup_s": 1, "start_jitter_ms": 200 }}{sweep}
}}"#
    );
    parse(&text).unwrap()
}

#[test]
fn minimal_file_gets_defaults() {
    let s = parse(MINIMAL).unwrap();
    assert_eq!(s.solver, SolverParams::default());
    assert_eq!(s.solver.epsilon, 0.3);
    assert_eq!(s.solver.k_paths, 4);
    assert_eq!(s.sim.buffer_bytes, 1_000_000);
    assert_eq!(s.sim.duration_s, 60.0);
    assert_eq!(s.sim.warmup_s, 5.0);
    assert_eq!(s.sim.percentile, 10.0);
    assert_eq!(s.sim.base_delay_ms, Some(4.0));
    assert_eq!(s.applications[0].app_type, "ssh");
    assert_eq!(s.grids.len(), 1);
    assert!(s.sweep.is_none());
    let pts = s.points();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].counts, vec![1]);
    assert_eq!(pts[0].id(), "p00-n001");
}

#[test]
fn missing_capacity_names_the_link() {
    let text = MINIMAL.replace(r#""capacity_kbps": 10000, "#, "");
    let err = parse(&text).unwrap_err().to_string();
    assert!(err.contains("link #0 (a->b)"), "{err}");
    assert!(err.contains("capacity_kbps"), "{err}");
}

#[test]
fn unknown_field_reports_its_position() {
    let text = MINIMAL.replace(r#""count": 1"#, r#""count": 1, "colour": "red""#);
    match parse(&text) {
        Err(ScenarioError::Parse { message, .. }) => {
            assert!(message.contains("colour"), "{message}");
            assert!(message.contains("line 3"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn delay_curve_accepts_both_spellings() {
    let pairs = MINIMAL.replace(r#""delay_ms": 4"#, r#""delay_curve": [[0, 1], [10000, 9]]"#);
    let arrays = MINIMAL.replace(
        r#""delay_ms": 4"#,
        r#""delay_curve": { "usage_points": [0, 10000], "delay_points": [1, 9] }"#,
    );
    let a = parse(&pairs).unwrap();
    let b = parse(&arrays).unwrap();
    assert_eq!(a.topology, b.topology);
    assert_eq!(a.sim.base_delay_ms, Some(1.0));
}

#[test]
fn invalid_values_are_listed() {
    let text = MINIMAL
        .replace(r#""dst": "b""#, r#""dst": "zz""#)
        .replace(r#""applications""#, r#""solver": { "epsilon": -1 }, "applications""#);
    match parse(&text) {
        Err(ScenarioError::Invalid(list)) => {
            assert!(list.iter().any(|m| m.contains("epsilon")), "{list:?}");
            assert!(list.iter().any(|m| m.contains("unknown node zz")), "{list:?}");
        }
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn sweep_must_ascend() {
    let text = MINIMAL.replace(
        r#""applications""#,
        r#""sweep": { "totals": [20, 10] }, "applications""#,
    );
    let err = parse(&text).unwrap_err().to_string();
    assert!(err.contains("strictly ascending"), "{err}");
}

#[test]
fn missing_grid_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#""class": "ssh""#, r#""app_type": "probe", "grid": "nope.csv""#);
    match parse_scenario(&text, dir.path()) {
        Err(ScenarioError::Grid { entry, path, .. }) => {
            assert_eq!(entry, 0);
            assert_eq!(path, "nope.csv");
        }
        other => panic!("expected a grid error, got {other:?}"),
    }
}

#[test]
fn grid_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.csv"), "tp_kbps\\d_ms,10,50\n100,3,2\n1000,4.5,3\n").unwrap();
    let text = MINIMAL.replace(r#""class": "ssh""#, r#""app_type": "probe", "grid": "g.csv""#);
    let file = dir.path().join("s.json");
    std::fs::write(&file, text).unwrap();
    let s = load_scenario(&file).unwrap();
    assert_eq!(s.grids[0].tp_levels, vec![100.0, 1000.0]);
    let (problem, classes) = s.problem(&s.points()[0]);
    assert_eq!(problem.apps[0].id, "probe-000");
    assert_eq!(classes, vec![None]);
}

#[test]
fn expand_counts_examples() {
    assert_eq!(expand_counts(&[2, 2, 2, 2, 1, 1], 10), vec![2, 2, 2, 2, 1, 1]);
    assert_eq!(expand_counts(&[2, 2, 2, 2, 1, 1], 20), vec![4, 4, 4, 4, 2, 2]);
    // 15 * 2/10 = 3 exactly; 15 * 1/10 = 1.5 for the last two, which share
    // one leftover application.
    assert_eq!(expand_counts(&[2, 2, 2, 2, 1, 1], 15), vec![3, 3, 3, 3, 2, 1]);
    assert_eq!(expand_counts(&[1, 1, 1], 2), vec![1, 1, 0]);
    assert_eq!(expand_counts(&[3, 1], 0), vec![0, 0]);
    assert_eq!(expand_counts(&[0, 0], 5), vec![0, 0]);
}

#[test]
fn sweep_produces_one_point_per_total() {
    let s = quick(&[10, 20]);
    let pts = s.points();
    assert_eq!(pts.len(), 2);
    assert_eq!(pts[0].counts, vec![5, 5]);
    assert_eq!(pts[1].counts, vec![10, 10]);
    assert_eq!(pts[1].id(), "p01-n020");
    let (problem, classes) = s.problem(&pts[0]);
    assert_eq!(problem.apps.len(), 10);
    assert_eq!(problem.apps[0].id, "ssh-000");
    assert_eq!(problem.apps[5].id, "voip-000");
    assert_eq!(classes[9], Some(AppClass::Voip));
    let expanded = s.expanded();
    assert_eq!(expanded[1].1.applications[0].count, 10);
    assert!(expanded[1].1.sweep.is_none());
}

#[test]
fn empty_mix_is_a_trivial_point() {
    let s = parse(&MINIMAL.replace(r#""count": 1"#, r#""count": 0"#)).unwrap();
    let report = run_experiment(&s);
    let p = &report.points[0];
    assert_eq!(p.status, PointStatus::Ok);
    assert!(p.reason.is_none());
    assert!(p.managed.is_none() && p.best_effort.is_none());
    assert!(p.per_type.is_empty());
    assert!(p.allocation.as_ref().unwrap().apps.is_empty());
}

/// Drops the fields that are kept in memory only.
fn without_raw_samples(mut r: Report) -> Report {
    for p in &mut r.points {
        p.wall_time = Default::default();
        if let Some(a) = &mut p.allocation {
            a.stats.wall_time = Default::default();
        }
        for run in [&mut p.managed, &mut p.best_effort].into_iter().flatten() {
            run.metrics.link.queue_delays_ms.clear();
            for f in &mut run.metrics.flows {
                f.delays_ms.clear();
            }
        }
    }
    r
}

#[test]
fn report_round_trips_through_json() {
    let report = run_experiment(&quick(&[]));
    let p = &report.points[0];
    assert_eq!(p.status, PointStatus::Ok);
    assert!(p.managed.is_some() && p.best_effort.is_some());
    let text = serde_json::to_string(&report).unwrap();
    let back: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(back, without_raw_samples(report));
}

#[test]
fn reports_are_reproducible_byte_for_byte() {
    let s = quick(&[2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24]);
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let files = emit_report(&run_experiment(&s), ReportFormat::Both, first.path()).unwrap();
    emit_report(&run_experiment(&s), ReportFormat::Both, second.path()).unwrap();
    assert_eq!(files.len(), 5);

    let sweep = std::fs::read_to_string(first.path().join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_COLUMNS.join(","));
    assert_eq!(lines.count(), 12);

    for f in &files {
        let name = f.file_name().unwrap();
        let a = std::fs::read(f).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert!(a == b, "{name:?} differs between runs");
    }
}

#[test]
fn formats_select_files() {
    let report = run_experiment(&parse(&MINIMAL.replace(r#""count": 1"#, r#""count": 0"#)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let json = emit_report(&report, ReportFormat::Json, &dir.path().join("j")).unwrap();
    assert_eq!(json.len(), 1);
    let csv = emit_report(&report, ReportFormat::Csv, &dir.path().join("c")).unwrap();
    assert_eq!(csv.len(), 4);
    let header = std::fs::read_to_string(dir.path().join("c/per_app.csv")).unwrap();
    assert_eq!(header.trim_end(), PER_APP_COLUMNS.join(","));
}

/// Exact shares rounded down; empty when the base is all zero.
fn floor_shares(base: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = base.iter().sum();
    base.iter().filter_map(|&b| (b * total).checked_div(sum)).collect()
}

proptest! {
    #[test]
    fn expanded_counts_keep_the_total_and_the_ratio(
        base in prop::collection::vec(0usize..20, 1..8),
        total in 0usize..300,
    ) {
        let sum: usize = base.iter().sum();
        let counts = expand_counts(&base, total);
        prop_assert_eq!(counts.len(), base.len());
        match (floor_shares(&base, total), sum) {
            (_, 0) => prop_assert!(counts.iter().all(|&c| c == 0)),
            (floors, _) => {
                prop_assert_eq!(counts.iter().sum::<usize>(), total);
                for (&floor, &c) in floors.iter().zip(&counts) {
                    prop_assert!(c == floor || c == floor + 1);
                }
            }
        }
    }
}
