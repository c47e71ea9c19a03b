//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p pacealloc-core --test acceptance`.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pacealloc_core::allocation::{
    brute_force_oracle, encode_delay_segments, evaluate, solve, solve_heuristic, solve_stage1, AllocationError,
    AllocationProblem, AllocationResult,
};
use pacealloc_core::scenario::{emit_report, load_scenario, run_experiment, Report, ReportFormat};
use pacealloc_core::topology::{link_delay, DelayCurve};
use pacealloc_core::utility::{mos_dl, mos_web, u_has, u_ssh, u_voip, SshAnchorTable, VoipCoefficients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Instances are drawn until this many are feasible, so the assignment
/// comparison covers at least `MIN_COMPARED` solved instances.
const CORPUS_FEASIBLE: usize = 250;
const MIN_COMPARED: usize = 200;
const CORPUS_MAX_SEEDS: u64 = 20_000;
const CORPUS_TIME_LIMIT: Duration = Duration::from_secs(60);
const ENCODING_PAIRS: usize = 1000;
const ENCODING_TOL: f64 = 1e-9;
const ANCHOR_TOL: f64 = 0.05;
const MANAGED_P95_LIMIT_MS: f64 = 5.0;
const POINT_TIME_LIMIT: Duration = Duration::from_secs(30);
const LOSS_FROM_APPS: usize = 40;
const LOSS_INVERSIONS_ALLOWED: usize = 1;
const QUEUE_RATIO: f64 = 10.0;
const DEVIATION_LIMIT: f64 = 0.5;
const TIGHT_DEVIATION_LIMIT: f64 = 0.2;
const F_INDEX_MIN: f64 = 0.98;
const EXACT_TIME_LIMIT: Duration = Duration::from_secs(60);
const HEURISTIC_TIME_LIMIT: Duration = Duration::from_secs(1);

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Outcome of the exact solver and the oracle on one corpus instance.
struct Solved {
    problem: AllocationProblem,
    exact: Result<AllocationResult, AllocationError>,
    oracle: Result<AllocationResult, AllocationError>,
}

fn corpus() -> (Vec<Solved>, Duration) {
    let started = Instant::now();
    let mut solved = Vec::new();
    let mut feasible = 0;
    for seed in 0..CORPUS_MAX_SEEDS {
        let problem = common::random_instance(seed);
        let exact = solve(&problem);
        let oracle = brute_force_oracle(&problem);
        feasible += usize::from(oracle.is_ok());
        solved.push(Solved { problem, exact, oracle });
        if feasible == CORPUS_FEASIBLE {
            break;
        }
    }
    (solved, started.elapsed())
}

fn oracle_equivalence(corpus: &[Solved], took: Duration) -> Check {
    let mut feasible = 0;
    let mut mismatches = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        match (&s.exact, &s.oracle) {
            (Ok(a), Ok(b)) if a.signature() == b.signature() => feasible += 1,
            (Err(AllocationError::Infeasible { class: a, .. }), Err(AllocationError::Infeasible { class: b, .. }))
                if a == b => {}
            _ => mismatches.push(i),
        }
    }
    check(
        mismatches.is_empty() && feasible >= MIN_COMPARED && took < CORPUS_TIME_LIMIT,
        format!(
            "{} instances, {feasible} feasible, {} mismatches {:?}, {:.1} s",
            corpus.len(),
            mismatches.len(),
            mismatches,
            took.as_secs_f64()
        ),
    )
}

fn two_stage_contract(corpus: &[Solved]) -> Check {
    let mut checked = 0;
    let mut bad = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        let Ok(r) = &s.exact else { continue };
        checked += 1;
        let eps_ok = r.uv_min2 >= r.uv_min1 - s.problem.epsilon - 1e-9;
        let sum_ok = match solve_stage1(&s.problem) {
            Ok((_, witness)) => {
                let wsum: f64 = evaluate(&s.problem, &witness).utilities.iter().sum();
                r.utility_sum >= wsum - 1e-9
            }
            Err(_) => false,
        };
        if !(eps_ok && sum_ok) {
            bad.push(i);
        }
    }
    check(
        bad.is_empty(),
        format!("{checked} solved instances, violations {bad:?}"),
    )
}

fn random_curve(rng: &mut ChaCha8Rng) -> DelayCurve {
    let knots = rng.gen_range(2..=8);
    let cap = rng.gen_range(1.0..1e6);
    let mut usage: Vec<f64> = (0..knots - 2).map(|_| rng.gen_range(0.0..cap)).collect();
    usage.push(0.0);
    usage.push(cap);
    usage.sort_by(f64::total_cmp);
    usage.dedup();
    let mut d = rng.gen_range(0.0..50.0);
    let delays = usage
        .iter()
        .map(|_| {
            let v = d;
            d += rng.gen_range(0.0..100.0);
            v
        })
        .collect();
    DelayCurve::new(usage, delays)
}

fn delay_encoding() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..ENCODING_PAIRS {
        let curve = random_curve(&mut rng);
        let cap = *curve.usage_points.last().unwrap();
        let usage = match i % 10 {
            0 => curve.usage_points[rng.gen_range(0..curve.usage_points.len())],
            _ => rng.gen_range(0.0..=cap),
        };
        match (encode_delay_segments(&curve, usage), link_delay(&curve, usage)) {
            (Ok(e), Ok(d)) => {
                let err = (e.delay - d).abs().max((e.usage - usage).abs());
                worst = worst.max(err);
            }
            _ => failures += 1,
        }
    }
    check(
        failures == 0 && worst <= ENCODING_TOL,
        format!("{ENCODING_PAIRS} pairs, worst error {worst:.2e}, {failures} failures"),
    )
}

fn utility_anchors() -> Check {
    let ssh = SshAnchorTable::default();
    let voip = VoipCoefficients::default();
    let near = |v: Result<f64, _>, want: f64| v.is_ok_and(|v: f64| (v - want).abs() <= ANCHOR_TOL);
    let exact = |v: Result<f64, _>, want: f64| v.is_ok_and(|v: f64| v == want);
    let cases = [
        ("mos_web(2.2)", near(mos_web(2.2), 4.03)),
        ("mos_web(6.8)", near(mos_web(6.8), 3.03)),
        ("mos_dl(28)", near(mos_dl(28.0), 4.01)),
        ("u_ssh(0)", exact(u_ssh(0.0, &ssh), 5.0)),
        ("u_ssh(1200)", exact(u_ssh(1200.0, &ssh), 1.0)),
        ("u_has(min)", exact(u_has(1.0, 1.0, 6.0), 1.0)),
        ("u_has(max)", exact(u_has(6.0, 1.0, 6.0), 5.0)),
        ("u_has(mid)", exact(u_has(3.5, 1.0, 6.0), 3.0)),
        ("u_voip(0, 34.5)", near(u_voip(0.0, 34.5, &voip), 5.0)),
        ("u_voip(0.08, 80)", near(u_voip(0.08, 80.0, &voip), 4.9)),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    check(failed.is_empty(), format!("{} anchors, failed {failed:?}", cases.len()))
}

fn managed_qos(r: &Report) -> Check {
    let mut worst_p95: f64 = 0.0;
    let mut lossy = Vec::new();
    let mut slow = Vec::new();
    let mut missing = Vec::new();
    for p in &r.points {
        match &p.managed {
            Some(m) => {
                if m.metrics.dropped > 0 {
                    lossy.push(p.id.clone());
                }
                worst_p95 = worst_p95.max(m.metrics.link.queue_delay_p95_ms);
            }
            None => missing.push(p.id.clone()),
        }
        if p.wall_time >= POINT_TIME_LIMIT {
            slow.push(p.id.clone());
        }
    }
    let slowest = r.points.iter().map(|p| p.wall_time).max().unwrap_or_default();
    check(
        r.points.len() == 12
            && missing.is_empty()
            && lossy.is_empty()
            && slow.is_empty()
            && worst_p95 < MANAGED_P95_LIMIT_MS,
        format!(
            "{} points, lossy {lossy:?}, missing {missing:?}, worst p95 {worst_p95:.3} ms, slowest point {:.2} s",
            r.points.len(),
            slowest.as_secs_f64()
        ),
    )
}

fn best_effort_trend(r: &Report) -> Check {
    let mut losses = Vec::new();
    for p in &r.points {
        match &p.best_effort {
            Some(b) => losses.push((p.total_apps, b.metrics.loss)),
            None => return check(false, format!("{} has no best-effort run", p.id)),
        }
    }
    let positive = losses.iter().filter(|l| l.0 >= LOSS_FROM_APPS).all(|l| l.1 > 0.0);
    let inversions = losses.windows(2).filter(|w| w[1].1 < w[0].1).count();
    let last = r.points.last();
    let queue = |run: Option<&pacealloc_core::scenario::RunReport>| run.map(|x| x.metrics.link.queue_delay_mean_ms);
    let (m, b) = (
        last.and_then(|p| queue(p.managed.as_ref())),
        last.and_then(|p| queue(p.best_effort.as_ref())),
    );
    let ratio = match (m, b) {
        (Some(m), Some(b)) if m > 0.0 => b / m,
        (Some(_), Some(b)) if b > 0.0 => f64::INFINITY,
        _ => 0.0,
    };
    let shown: Vec<String> = losses.iter().map(|l| format!("{:.4}", l.1)).collect();
    check(
        positive && inversions <= LOSS_INVERSIONS_ALLOWED && ratio >= QUEUE_RATIO,
        format!(
            "loss [{}], {inversions} inversions, mean queueing at {} apps {:.3} vs {:.3} ms ({ratio:.0}x)",
            shown.join(", "),
            last.map_or(0, |p| p.total_apps),
            b.unwrap_or(f64::NAN),
            m.unwrap_or(f64::NAN)
        ),
    )
}

fn predictability(r: &Report) -> Check {
    let mut worst = [("web", 0.0f64), ("dl", 0.0), ("ssh", 0.0), ("voip", 0.0)];
    let mut missing = Vec::new();
    for p in &r.points {
        for (ty, w) in &mut worst {
            match p.per_type.iter().find(|t| t.app_type == *ty).and_then(|t| t.deviation) {
                Some(d) => *w = w.max(d),
                None => missing.push(format!("{}/{ty}", p.id)),
            }
        }
    }
    let ok = missing.is_empty()
        && worst.iter().all(|w| w.1 <= DEVIATION_LIMIT)
        && worst
            .iter()
            .filter(|w| w.0 == "dl" || w.0 == "ssh")
            .all(|w| w.1 <= TIGHT_DEVIATION_LIMIT);
    let shown: Vec<String> = worst.iter().map(|w| format!("{} {:.3}", w.0, w.1)).collect();
    check(ok, format!("worst deviation {}, missing {missing:?}", shown.join(", ")))
}

fn fairness(r: &Report) -> Check {
    let mut worst = (String::new(), f64::INFINITY);
    let mut missing = Vec::new();
    for p in &r.points {
        for t in &p.per_type {
            match t.f_index_managed {
                Some(f) if f < worst.1 => worst = (format!("{}/{}", p.id, t.app_type), f),
                Some(_) => {}
                None => missing.push(format!("{}/{}", p.id, t.app_type)),
            }
        }
    }
    check(
        missing.is_empty() && worst.1 >= F_INDEX_MIN,
        format!(
            "lowest managed F-index {:.4} at {}, missing {missing:?}",
            worst.1, worst.0
        ),
    )
}

fn solver_runtime(corpus: &[Solved]) -> Check {
    let scenario = match load_scenario(&fixtures().join("class_sweep.json")) {
        Ok(s) => s,
        Err(e) => return check(false, e.to_string()),
    };
    let Some(point) = scenario.points().into_iter().find(|p| p.total == 120) else {
        return check(false, "no 120-application point");
    };
    let (problem, _) = scenario.problem(&point);
    let started = Instant::now();
    let exact = solve(&problem);
    let exact_time = started.elapsed();
    let started = Instant::now();
    let heuristic = solve_heuristic(&problem);
    let heuristic_time = started.elapsed();
    let heuristic_ok = heuristic
        .as_ref()
        .is_ok_and(|h| evaluate(&problem, &h.assignment()).feasible);

    let mut unsound = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        if let Ok(h) = solve_heuristic(&s.problem) {
            if !evaluate(&s.problem, &h.assignment()).feasible {
                unsound.push(i);
            }
        }
    }
    check(
        problem.per_type_equal
            && problem.apps.len() == 120
            && exact.is_ok()
            && exact_time < EXACT_TIME_LIMIT
            && heuristic_ok
            && heuristic_time < HEURISTIC_TIME_LIMIT
            && unsound.is_empty(),
        format!(
            "exact {:.3} s (uv_min1 {}), heuristic {:.3} s (uv_min1 {}), infeasible heuristic results on corpus {unsound:?}",
            exact_time.as_secs_f64(),
            exact.as_ref().map_or(f64::NAN, |r| r.uv_min1),
            heuristic_time.as_secs_f64(),
            heuristic.as_ref().map_or(f64::NAN, |r| r.uv_min1),
        ),
    )
}

/// Loads, runs and emits a fixture into `dir`; returns the report.
fn pipeline(fixture: &str, dir: &Path) -> Result<Report, String> {
    let scenario = load_scenario(&fixtures().join(fixture)).map_err(|e| e.to_string())?;
    let report = run_experiment(&scenario);
    emit_report(&report, ReportFormat::Both, dir).map_err(|e| e.to_string())?;
    Ok(report)
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{} differs", n.to_string_lossy()));
        }
    }
    Ok(names.len())
}

/// Runs each fixture twice and compares the artifacts. Hands back the
/// six-class sweep report for the other criteria.
fn determinism() -> (Check, Option<Report>) {
    let root = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return (check(false, e.to_string()), None),
    };
    let mut notes = Vec::new();
    let mut pass = true;
    let mut sweep_report = None;
    for fixture in ["class_sweep.json", "small_mix.json", "custom_grid.json"] {
        let (a, b) = (
            root.path().join(format!("{fixture}.a")),
            root.path().join(format!("{fixture}.b")),
        );
        let outcome = pipeline(fixture, &a).and_then(|r| {
            pipeline(fixture, &b)?;
            let n = same_files(&a, &b)?;
            Ok((r, n))
        });
        match outcome {
            Ok((r, n)) => {
                notes.push(format!("{fixture} {n} files identical"));
                if fixture == "class_sweep.json" {
                    sweep_report = Some(r);
                }
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{fixture}: {e}"));
            }
        }
    }
    (check(pass, notes.join(", ")), sweep_report)
}

fn main() -> ExitCode {
    let (corpus, corpus_time) = corpus();
    let (c10, sweep_report) = determinism();
    let sweep = |f: fn(&Report) -> Check| match &sweep_report {
        Some(r) => f(r),
        None => check(false, "six-class sweep did not run"),
    };
    let results = [
        ("oracle equivalence", oracle_equivalence(&corpus, corpus_time)),
        ("two-stage contract", two_stage_contract(&corpus)),
        ("piecewise delay encoding", delay_encoding()),
        ("utility anchors", utility_anchors()),
        ("managed link QoS", sweep(managed_qos)),
        ("best-effort degradation", sweep(best_effort_trend)),
        ("predictability", sweep(predictability)),
        ("fairness", sweep(fairness)),
        ("solver runtime", solver_runtime(&corpus)),
        ("determinism", c10),
    ];
    let mut failed = 0;
    for (i, (name, c)) in results.iter().enumerate() {
        println!(
            "{} {:>2} {name}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            i + 1,
            c.detail
        );
        failed += usize::from(!c.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
