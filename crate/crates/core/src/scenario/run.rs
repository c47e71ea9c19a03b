//! Solve, simulate with and without pacing, and score the measured KPIs.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioPoint, SolverMode};
use crate::allocation::{brute_force_oracle, solve, solve_heuristic, AllocationResult, AppAllocation};
use crate::metrics::{f_index, percentile_summary, SampleSource, Summary, UtilitySample};
use crate::sim::{
    self, allocation_to_sim_with, AppMetrics, Discipline, FlowMetrics, SimConfig, SimMetrics, SourceSpec, Workload,
};
use crate::utility::{u_dl, u_ssh, u_voip, u_web, AppClass, ClassModel, UtilityGrid, UTILITY_MAX, UTILITY_MIN};

const MSS: u32 = 1500;
const INITIAL_WINDOW: u32 = 10;
const THINK_MS: f64 = 100.0;
const SSH_RESPONSE_BYTES: u64 = 200;
const VOIP_PKT: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Managed,
    BestEffort,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Managed => "managed",
            RunKind::BestEffort => "best_effort",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Failed,
}

/// One simulation of a point and the utilities scored from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: RunKind,
    pub metrics: SimMetrics,
    pub samples: Vec<UtilitySample>,
    pub summary: Summary,
}

/// Allocated target against simulated outcome for one application type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub app_type: String,
    pub apps: usize,
    /// Mean allocated utility.
    pub target: f64,
    pub f_index_allocated: f64,
    /// Mean of the per-app percentiles in the managed run.
    pub managed: Option<f64>,
    pub best_effort: Option<f64>,
    /// |managed - target|.
    pub deviation: Option<f64>,
    pub f_index_managed: Option<f64>,
    pub f_index_best_effort: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub id: String,
    pub total_apps: usize,
    /// Applications per type.
    pub counts: BTreeMap<String, usize>,
    pub status: PointStatus,
    pub reason: Option<String>,
    pub allocation: Option<AllocationResult>,
    pub managed: Option<RunReport>,
    pub best_effort: Option<RunReport>,
    pub per_type: Vec<TypeReport>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub mode: SolverMode,
    /// Simulated seconds per run, warm-up included.
    pub duration_s: f64,
    pub warmup_s: f64,
    pub percentile: f64,
    pub points: Vec<PointReport>,
}

/// Runs every point of the scenario in order. Failures are recorded in the
/// point and do not stop the sweep.
pub fn run_experiment(scenario: &Scenario) -> Report {
    report(scenario, run_point)
}

/// Like [`run_experiment`] without the simulations: allocations and their
/// targets only.
pub fn solve_experiment(scenario: &Scenario) -> Report {
    report(scenario, solve_point)
}

fn report(scenario: &Scenario, each: fn(&Scenario, &ScenarioPoint) -> PointReport) -> Report {
    Report {
        name: scenario.name.clone(),
        seed: scenario.seed,
        mode: scenario.solver.mode,
        duration_s: scenario.sim.duration_s,
        warmup_s: scenario.sim.warmup_s,
        percentile: scenario.sim.percentile,
        points: scenario.points().iter().map(|p| each(scenario, p)).collect(),
    }
}

/// Static description of an application needed to score it.
struct AppInfo<'a> {
    id: &'a str,
    app_type: &'a str,
    class: Option<AppClass>,
    grid: &'a UtilityGrid,
    alloc: &'a AppAllocation,
}

/// Solves a point, then simulates it managed and best effort.
pub fn run_point(scenario: &Scenario, point: &ScenarioPoint) -> PointReport {
    point_report(scenario, point, true)
}

/// Solves a point without simulating it.
pub fn solve_point(scenario: &Scenario, point: &ScenarioPoint) -> PointReport {
    point_report(scenario, point, false)
}

fn point_report(scenario: &Scenario, point: &ScenarioPoint, simulate: bool) -> PointReport {
    let started = Instant::now();
    let (problem, classes) = scenario.problem(point);
    let mut counts = BTreeMap::new();
    for a in &problem.apps {
        *counts.entry(a.app_type.clone()).or_insert(0) += 1;
    }
    let mut report = PointReport {
        id: point.id(),
        total_apps: problem.apps.len(),
        counts,
        status: PointStatus::Ok,
        reason: None,
        allocation: None,
        managed: None,
        best_effort: None,
        per_type: Vec::new(),
        wall_time: Duration::ZERO,
    };
    let solved = match scenario.solver.mode {
        SolverMode::Exact => solve(&problem),
        SolverMode::Heuristic => solve_heuristic(&problem),
        SolverMode::Oracle => brute_force_oracle(&problem),
    };
    let result = match solved {
        Ok(r) => r,
        Err(e) => {
            report.status = PointStatus::Failed;
            report.reason = Some(format!("allocation: {e}"));
            report.wall_time = started.elapsed();
            return report;
        }
    };
    let by_id: BTreeMap<&str, &AppAllocation> = result.apps.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut infos: Vec<AppInfo> = problem
        .apps
        .iter()
        .zip(&classes)
        .map(|(a, &class)| AppInfo {
            id: &a.id,
            app_type: &a.app_type,
            class,
            grid: &a.grid,
            alloc: by_id[a.id.as_str()],
        })
        .collect();
    infos.sort_by(|a, b| a.id.cmp(b.id));

    if simulate && !infos.is_empty() {
        match simulate_both(scenario, point, &result, &infos) {
            Ok((m, b)) => {
                report.managed = Some(m);
                report.best_effort = Some(b);
            }
            Err(e) => {
                report.status = PointStatus::Failed;
                report.reason = Some(format!("simulation: {e}"));
            }
        }
    }
    report.per_type = per_type(&infos, report.managed.as_ref(), report.best_effort.as_ref());
    report.allocation = Some(result);
    report.wall_time = started.elapsed();
    report
}

/// Managed and best-effort simulation setups of a solved point, in that
/// order. Fails when the allocation loads more than one link.
pub fn sim_configs(
    scenario: &Scenario,
    point: &ScenarioPoint,
    result: &AllocationResult,
) -> Result<(SimConfig, SimConfig), String> {
    let (problem, classes) = scenario.problem(point);
    let class_of: BTreeMap<&str, Option<AppClass>> = problem
        .apps
        .iter()
        .zip(&classes)
        .map(|(a, &c)| (a.id.as_str(), c))
        .collect();
    configs(scenario, point, result, &class_of)
}

fn configs(
    scenario: &Scenario,
    point: &ScenarioPoint,
    result: &AllocationResult,
    class_of: &BTreeMap<&str, Option<AppClass>>,
) -> Result<(SimConfig, SimConfig), String> {
    let used: Vec<_> = result.links.iter().filter(|l| l.usage_kbps > 0.0).collect();
    let capacity = match used.as_slice() {
        [l] => l.capacity_kbps,
        [] => result.links.first().map_or(1.0, |l| l.capacity_kbps),
        _ => return Err("allocation loads more than one link; only a single bottleneck is simulated".into()),
    };
    let p = &scenario.sim;
    let mut template = SimConfig::new(capacity, p.base_delay_ms.unwrap_or(0.0), p.duration_s, p.warmup_s);
    template.buffer_bytes = p.buffer_bytes;
    template.start_jitter_ms = p.start_jitter_ms;
    template.access_rate_kbps = p.access_rate_kbps;
    template.rng_seed = scenario.seed.wrapping_add(point.index as u64);

    let class = |id: &str| {
        class_of
            .get(id)
            .copied()
            .ok_or(format!("application {id} is not in the scenario"))
    };
    let mut missing = None;
    let managed = allocation_to_sim_with(result, &template, |a| match class(&a.id) {
        Ok(c) => managed_workload(c, a),
        Err(e) => {
            missing.get_or_insert(e);
            (Workload::Backlogged, MSS)
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = missing {
        return Err(e);
    }
    let mut ids: Vec<&str> = result.apps.iter().map(|a| a.id.as_str()).collect();
    ids.sort_unstable();
    let mut best = template;
    for id in ids {
        best.sources.extend(best_effort_sources(id, class(id)?));
    }
    Ok((managed, best))
}

/// Simulates one kind of run of a solved point and scores it. The trace,
/// when given, receives the bottleneck queue events.
pub fn simulate_allocation(
    scenario: &Scenario,
    point: &ScenarioPoint,
    result: &AllocationResult,
    kind: RunKind,
    trace: Option<&mut dyn std::io::Write>,
) -> Result<RunReport, String> {
    let (problem, classes) = scenario.problem(point);
    let by_id: BTreeMap<&str, &AppAllocation> = result.apps.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut infos = Vec::new();
    for (a, &class) in problem.apps.iter().zip(&classes) {
        let alloc = by_id
            .get(a.id.as_str())
            .ok_or(format!("allocation has no entry for application {}", a.id))?;
        infos.push(AppInfo {
            id: &a.id,
            app_type: &a.app_type,
            class,
            grid: &a.grid,
            alloc,
        });
    }
    if infos.len() != result.apps.len() {
        return Err(format!(
            "allocation lists {} applications, the point has {}",
            result.apps.len(),
            infos.len()
        ));
    }
    infos.sort_by(|a, b| a.id.cmp(b.id));
    let class_of: BTreeMap<&str, Option<AppClass>> = infos.iter().map(|i| (i.id, i.class)).collect();
    let (managed, best) = configs(scenario, point, result, &class_of)?;
    let cfg = match kind {
        RunKind::Managed => managed,
        RunKind::BestEffort => best,
    };
    let metrics = match trace {
        Some(w) => sim::run_traced(&cfg, w),
        None => sim::run(&cfg),
    }
    .map_err(|e| e.to_string())?;
    score(&infos, kind, metrics, scenario.sim.percentile)
}

fn score(infos: &[AppInfo], kind: RunKind, metrics: SimMetrics, pct: f64) -> Result<RunReport, String> {
    let samples = simulated_samples(&metrics, infos.iter().map(|i| i.as_tuple()), kind);
    let summary = percentile_summary(&samples, pct).map_err(|e| e.to_string())?;
    Ok(RunReport {
        kind,
        metrics,
        samples,
        summary,
    })
}

fn simulate_both(
    scenario: &Scenario,
    point: &ScenarioPoint,
    result: &AllocationResult,
    infos: &[AppInfo],
) -> Result<(RunReport, RunReport), String> {
    let class_of: BTreeMap<&str, Option<AppClass>> = infos.iter().map(|i| (i.id, i.class)).collect();
    let (managed_cfg, be_cfg) = configs(scenario, point, result, &class_of)?;
    let managed = sim::run(&managed_cfg).map_err(|e| e.to_string())?;
    let best = sim::run(&be_cfg).map_err(|e| e.to_string())?;
    let pct = scenario.sim.percentile;
    Ok((
        score(infos, RunKind::Managed, managed, pct)?,
        score(infos, RunKind::BestEffort, best, pct)?,
    ))
}

impl AppInfo<'_> {
    fn as_tuple(&self) -> (&str, &str, Option<AppClass>, &UtilityGrid, &AppAllocation) {
        (self.id, self.app_type, self.class, self.grid, self.alloc)
    }
}

fn video_ladder(class: AppClass) -> Option<crate::utility::VideoLadder> {
    let m = ClassModel::new(class);
    match class {
        AppClass::Vod => Some(m.vod),
        AppClass::Live => Some(m.live),
        _ => None,
    }
}

fn requests(size_bytes: u64, think_ms: f64, min_interval_ms: f64) -> Workload {
    Workload::Requests {
        size_bytes,
        think_ms,
        min_interval_ms,
    }
}

/// Workload and packet size of a paced application.
fn managed_workload(class: Option<AppClass>, a: &AppAllocation) -> (Workload, u32) {
    let Some(class) = class else {
        return (Workload::Backlogged, MSS);
    };
    let m = ClassModel::new(class);
    match class {
        AppClass::Web => (requests(m.web.total_bytes, THINK_MS, 0.0), MSS),
        AppClass::Dl => (requests(m.download_bytes, THINK_MS, 0.0), MSS),
        AppClass::Ssh => (requests(SSH_RESPONSE_BYTES, THINK_MS, 0.0), MSS),
        AppClass::Vod | AppClass::Live => {
            let v = video_ladder(class).unwrap();
            let rate = v.bitrates_kbps[v.level(a.tp_kbps, a.d_ms) - 1];
            let bytes = (rate * v.segment_s * 1000.0 / 8.0).round() as u64;
            (requests(bytes, 0.0, v.segment_s * 1000.0), MSS)
        }
        AppClass::Voip => (
            Workload::Stream {
                rate_kbps: m.voip_stream_kbps,
            },
            VOIP_PKT,
        ),
    }
}

fn aimd(flow_id: String, app_id: &str, workload: Workload) -> SourceSpec {
    SourceSpec {
        flow_id,
        app_id: app_id.to_string(),
        discipline: Discipline::Aimd {
            mss_bytes: MSS,
            initial_window: INITIAL_WINDOW,
        },
        pkt_len: MSS,
        workload,
        start_ms: None,
    }
}

/// Unpaced sources of one application: six parallel connections for web,
/// one for the other elastic classes, a constant-rate stream for voice.
fn best_effort_sources(id: &str, class: Option<AppClass>) -> Vec<SourceSpec> {
    let Some(class) = class else {
        return vec![aimd(id.to_string(), id, Workload::Backlogged)];
    };
    let m = ClassModel::new(class);
    match class {
        AppClass::Web => (0..m.web.connections)
            .map(|c| aimd(format!("{id}/c{c}"), id, requests(m.web.total_bytes, THINK_MS, 0.0)))
            .collect(),
        AppClass::Dl => vec![aimd(id.to_string(), id, requests(m.download_bytes, THINK_MS, 0.0))],
        AppClass::Ssh => vec![aimd(id.to_string(), id, requests(SSH_RESPONSE_BYTES, THINK_MS, 0.0))],
        AppClass::Vod | AppClass::Live => {
            let v = video_ladder(class).unwrap();
            let top = *v.bitrates_kbps.last().unwrap();
            let bytes = (top * v.segment_s * 1000.0 / 8.0).round() as u64;
            vec![aimd(id.to_string(), id, requests(bytes, 0.0, v.segment_s * 1000.0))]
        }
        AppClass::Voip => vec![SourceSpec {
            flow_id: id.to_string(),
            app_id: id.to_string(),
            discipline: Discipline::Cbr {
                rate_kbps: m.voip_stream_kbps,
                pkt_bytes: VOIP_PKT,
            },
            pkt_len: VOIP_PKT,
            workload: Workload::Backlogged,
            start_ms: None,
        }],
    }
}

/// Relative slack on measured throughput before it falls to a lower grid
/// level. A source paced at exactly a level measures within a packet of it.
const TP_TOLERANCE: f64 = 0.01;

/// Grid value at the nearest grid point no better than the measurement:
/// the highest throughput level not above `tp`, the lowest delay level not
/// below `d`. Below the grid the utility is the scale minimum.
fn grid_at(grid: &UtilityGrid, tp: f64, d: f64) -> f64 {
    let i = grid.tp_levels.iter().rposition(|&t| t <= tp * (1.0 + TP_TOLERANCE));
    let j = grid.d_levels.iter().position(|&x| x >= d);
    match (i, j) {
        (Some(i), Some(j)) => grid.values[i][j],
        _ => UTILITY_MIN,
    }
}

/// Utility samples of one application from its measured KPIs. Requests
/// with nothing delivered score the scale minimum.
fn app_values(
    class: Option<AppClass>,
    grid: &UtilityGrid,
    alloc: &AppAllocation,
    app: Option<&AppMetrics>,
    flows: &[&FlowMetrics],
    kind: RunKind,
) -> Vec<f64> {
    let ok = |r: Result<f64, _>| r.unwrap_or(f64::NAN);
    let reqs = app.map(|a| a.requests.as_slice()).unwrap_or(&[]);
    let per_request = |f: &dyn Fn(f64, &sim::RequestRecord) -> f64| -> Vec<f64> {
        reqs.iter()
            .map(|r| r.duration_ms.map_or(UTILITY_MIN, |d| f(d, r)))
            .collect()
    };
    let Some(class) = class else {
        let tp: f64 = flows.iter().map(|f| f.throughput_kbps).sum();
        let n: u64 = flows.iter().map(|f| f.delivered).sum();
        let d = flows.iter().map(|f| f.mean_delay_ms * f.delivered as f64).sum::<f64>() / n.max(1) as f64;
        return vec![grid_at(grid, tp, d)];
    };
    let m = ClassModel::new(class);
    match class {
        AppClass::Web => {
            let rounds = m.web.request_rounds() as f64;
            per_request(&|d, r| ok(u_web((d + (rounds - 1.0) * r.mean_delay_ms) / 1000.0)))
        }
        AppClass::Dl => per_request(&|d, r| ok(u_dl((d + r.mean_delay_ms) / 1000.0))),
        AppClass::Ssh => per_request(&|d, _| ok(u_ssh(d, &m.ssh))),
        AppClass::Vod | AppClass::Live => {
            let v = video_ladder(class).unwrap();
            per_request(&|d, r| {
                let tp = match kind {
                    RunKind::Managed => alloc.tp_kbps,
                    RunKind::BestEffort => r.bytes as f64 * 8.0 / d,
                };
                ok(v.utility(tp, r.mean_delay_ms))
            })
        }
        AppClass::Voip => app
            .map(|a| a.intervals.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|i| ok(u_voip(i.loss, i.mean_delay_ms, &m.voip)))
            .collect(),
    }
}

/// Scores every application of a run. An application without any sample
/// gets one NaN sample so the summary notes it.
pub fn simulated_samples<'a>(
    metrics: &SimMetrics,
    apps: impl Iterator<Item = (&'a str, &'a str, Option<AppClass>, &'a UtilityGrid, &'a AppAllocation)>,
    kind: RunKind,
) -> Vec<UtilitySample> {
    let mut out = Vec::new();
    for (id, app_type, class, grid, alloc) in apps {
        let flows: Vec<&FlowMetrics> = metrics.flows.iter().filter(|f| f.app_id == id).collect();
        let mut values = app_values(class, grid, alloc, metrics.app(id), &flows, kind);
        if values.is_empty() {
            values.push(f64::NAN);
        }
        out.extend(values.into_iter().map(|v| UtilitySample {
            app_id: id.to_string(),
            app_type: app_type.to_string(),
            value: v.clamp(UTILITY_MIN, UTILITY_MAX),
            source: SampleSource::Simulated,
        }));
    }
    out
}

fn per_type(infos: &[AppInfo], managed: Option<&RunReport>, best: Option<&RunReport>) -> Vec<TypeReport> {
    let mut targets: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for i in infos {
        targets.entry(i.app_type).or_default().push(i.alloc.utility);
    }
    let per_app = |r: Option<&RunReport>, ty: &str| -> Option<(f64, f64)> {
        let s = &r?.summary;
        let value = s.per_type.iter().find(|t| t.app_type == ty)?.value;
        let vals: Vec<f64> = s
            .per_app
            .iter()
            .filter(|a| a.app_type == ty)
            .map(|a| a.percentile)
            .collect();
        Some((value, f_index(&vals, UTILITY_MIN, UTILITY_MAX).ok()?))
    };
    targets
        .into_iter()
        .map(|(ty, t)| {
            let target = t.iter().sum::<f64>() / t.len() as f64;
            let m = per_app(managed, ty);
            let b = per_app(best, ty);
            TypeReport {
                app_type: ty.to_string(),
                apps: t.len(),
                target,
                f_index_allocated: f_index(&t, UTILITY_MIN, UTILITY_MAX).unwrap_or(f64::NAN),
                managed: m.map(|x| x.0),
                best_effort: b.map(|x| x.0),
                deviation: m.map(|x| (x.0 - target).abs()),
                f_index_managed: m.map(|x| x.1),
                f_index_best_effort: b.map(|x| x.1),
            }
        })
        .collect()
}
