//! Experiment descriptions: a topology, an application mix, solver and
//! simulator settings, and an optional sweep over the number of applications.

mod report;
mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::allocation::{AllocationProblem, ApplicationFlow};
use crate::topology::{self, DelayCurve, Link, Topology};
use crate::utility::{build_grid, load_grid, AppClass, ClassModel, UtilityError, UtilityGrid};

pub use report::{emit_report, ReportFormat, PER_APP_COLUMNS, PER_LINK_COLUMNS, PER_TYPE_COLUMNS, SWEEP_COLUMNS};
pub use run::{
    run_experiment, run_point, sim_configs, simulate_allocation, simulated_samples, solve_experiment, solve_point,
    PointReport, PointStatus, Report, RunKind, RunReport, TypeReport,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("application entry {entry}: grid {path}: {source}")]
    Grid {
        entry: usize,
        path: String,
        source: UtilityError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    #[default]
    Exact,
    Heuristic,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_k_paths")]
    pub k_paths: usize,
    #[serde(default)]
    pub per_type_equal: bool,
    #[serde(default)]
    pub mode: SolverMode,
}

fn default_epsilon() -> f64 {
    AllocationProblem::DEFAULT_EPSILON
}

fn default_k_paths() -> usize {
    AllocationProblem::DEFAULT_K_PATHS
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            k_paths: default_k_paths(),
            per_type_equal: false,
            mode: SolverMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    #[serde(default = "default_buffer")]
    pub buffer_bytes: u64,
    /// One-way propagation delay; defaults to the zero-load delay of the
    /// lowest-capacity link.
    #[serde(default)]
    pub base_delay_ms: Option<f64>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_jitter")]
    pub start_jitter_ms: f64,
    #[serde(default = "default_access")]
    pub access_rate_kbps: f64,
    /// Percentile of each application's utility samples that is reported.
    #[serde(default = "default_percentile")]
    pub percentile: f64,
}

fn default_buffer() -> u64 {
    1_000_000
}
fn default_duration() -> f64 {
    60.0
}
fn default_warmup() -> f64 {
    5.0
}
fn default_jitter() -> f64 {
    1000.0
}
fn default_access() -> f64 {
    1_000_000.0
}
fn default_percentile() -> f64 {
    10.0
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            buffer_bytes: default_buffer(),
            base_delay_ms: None,
            duration_s: default_duration(),
            warmup_s: default_warmup(),
            start_jitter_ms: default_jitter(),
            access_rate_kbps: default_access(),
            percentile: default_percentile(),
        }
    }
}

/// One line of the application mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppMix {
    /// Defaults to the class name.
    #[serde(default)]
    pub app_type: String,
    pub count: usize,
    /// Builtin model; drives the simulated workload and the grid unless
    /// `grid` is given.
    #[serde(default)]
    pub class: Option<AppClass>,
    /// CSV utility grid, relative to the scenario file.
    #[serde(default)]
    pub grid: Option<String>,
    #[serde(default)]
    pub repair_grid: bool,
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Total application counts, ascending.
    pub totals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub topology: Topology,
    pub applications: Vec<AppMix>,
    pub solver: SolverParams,
    pub sim: SimParams,
    pub sweep: Option<Sweep>,
    /// Resolved utility grid of each application entry.
    #[serde(skip)]
    pub grids: Vec<UtilityGrid>,
}

/// Everything but the topology, which is parsed by hand for better errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    #[serde(default)]
    seed: u64,
    topology: Value,
    #[serde(default)]
    applications: Vec<AppMix>,
    #[serde(default)]
    solver: SolverParams,
    #[serde(default)]
    sim: SimParams,
    #[serde(default)]
    sweep: Option<Sweep>,
}

/// Reads, validates and resolves a scenario file. Relative grid paths are
/// taken from the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base).map_err(|e| match e {
        ScenarioError::Parse { message, .. } => ScenarioError::Parse {
            path: path.to_path_buf(),
            message,
        },
        e => e,
    })
}

/// Like [`load_scenario`] for an in-memory document.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        path: PathBuf::from("<scenario>"),
        message: e.to_string(),
    })?;
    let topology = parse_topology(&raw.topology).map_err(|e| ScenarioError::Invalid(vec![e]))?;
    let mut s = Scenario {
        name: raw.name,
        seed: raw.seed,
        topology,
        applications: raw.applications,
        solver: raw.solver,
        sim: raw.sim,
        sweep: raw.sweep,
        grids: Vec::new(),
    };
    for a in &mut s.applications {
        if a.app_type.is_empty() {
            if let Some(c) = a.class {
                a.app_type = c.as_str().to_string();
            }
        }
    }
    if s.sim.base_delay_ms.is_none() {
        s.sim.base_delay_ms = Some(default_base_delay(&s.topology));
    }
    let problems = s.validate();
    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(problems));
    }
    s.grids = s
        .applications
        .iter()
        .enumerate()
        .map(|(i, a)| resolve_grid(i, a, base_dir))
        .collect::<Result<_, _>>()?;
    Ok(s)
}

fn default_base_delay(t: &Topology) -> f64 {
    t.links
        .values()
        .min_by(|a, b| a.capacity_kbps.total_cmp(&b.capacity_kbps))
        .and_then(|l| l.delay_curve.delay_points.first().copied())
        .unwrap_or(0.0)
}

fn resolve_grid(entry: usize, a: &AppMix, base_dir: &Path) -> Result<UtilityGrid, ScenarioError> {
    if let Some(g) = &a.grid {
        return load_grid(&base_dir.join(g), a.repair_grid).map_err(|source| ScenarioError::Grid {
            entry,
            path: g.clone(),
            source,
        });
    }
    let class = a.class.expect("validated: class or grid");
    Ok(builtin_grid(class))
}

/// Default grid of a builtin class, repaired to be monotone.
pub fn builtin_grid(class: AppClass) -> UtilityGrid {
    let model = ClassModel::new(class);
    build_grid(|tp, d| model.evaluate(tp, d), &class.default_grid_spec())
        .expect("builtin models are defined on their whole grid")
        .grid
}

fn parse_topology(v: &Value) -> Result<Topology, String> {
    let obj = v.as_object().ok_or("topology must be an object")?;
    for k in obj.keys() {
        if k != "nodes" && k != "links" {
            return Err(format!("topology: unknown field {k:?}"));
        }
    }
    let mut t = Topology::new();
    if let Some(nodes) = obj.get("nodes") {
        for n in nodes.as_array().ok_or("topology.nodes must be a list")? {
            t.add_node(n.as_str().ok_or("topology.nodes must hold strings")?);
        }
    }
    let links = obj
        .get("links")
        .and_then(Value::as_array)
        .ok_or("topology.links must be a list")?;
    for (i, l) in links.iter().enumerate() {
        let name = |from: &str, to: &str| format!("link #{i} ({from}->{to})");
        let l = l.as_object().ok_or(format!("link #{i}: must be an object"))?;
        let text = |k: &str| l.get(k).and_then(Value::as_str).unwrap_or("?").to_string();
        let (from, to) = (text("from"), text("to"));
        for k in l.keys() {
            if !["from", "to", "capacity_kbps", "delay_ms", "delay_curve"].contains(&k.as_str()) {
                return Err(format!("{}: unknown field {k:?}", name(&from, &to)));
            }
        }
        for (k, v) in [("from", &from), ("to", &to)] {
            if v == "?" {
                return Err(format!("{}: missing or non-text field {k}", name(&from, &to)));
            }
        }
        let capacity = l
            .get("capacity_kbps")
            .ok_or(format!("{}: missing field capacity_kbps", name(&from, &to)))?
            .as_f64()
            .ok_or(format!("{}: capacity_kbps must be a number", name(&from, &to)))?;
        let curve = match (l.get("delay_ms"), l.get("delay_curve")) {
            (Some(d), None) => {
                let d = d
                    .as_f64()
                    .ok_or(format!("{}: delay_ms must be a number", name(&from, &to)))?;
                DelayCurve::constant(d, capacity)
            }
            (None, Some(c)) => match c {
                Value::Array(_) => {
                    serde_json::from_value::<Vec<[f64; 2]>>(c.clone()).map(|p| DelayCurve::from_pairs(&p))
                }
                _ => serde_json::from_value::<DelayCurve>(c.clone()),
            }
            .map_err(|_| {
                format!(
                    "{}: delay_curve must be {{usage_points, delay_points}} or a list of [usage, delay] pairs",
                    name(&from, &to)
                )
            })?,
            (None, None) => return Err(format!("{}: missing field delay_ms or delay_curve", name(&from, &to))),
            (Some(_), Some(_)) => return Err(format!("{}: give delay_ms or delay_curve, not both", name(&from, &to))),
        };
        if t.link(&from, &to).is_some() {
            return Err(format!("{}: duplicate link", name(&from, &to)));
        }
        t.add_link(
            from,
            to,
            Link {
                capacity_kbps: capacity,
                delay_curve: curve,
            },
        );
    }
    Ok(t)
}

/// Splits `total` in proportion to `base`, rounding by largest remainder;
/// ties go to the earlier entry.
pub fn expand_counts(base: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = base.iter().sum();
    if sum == 0 {
        return vec![0; base.len()];
    }
    let mut counts: Vec<usize> = base.iter().map(|&b| b * total / sum).collect();
    let mut rest: Vec<(usize, usize)> = base.iter().enumerate().map(|(i, &b)| (b * total % sum, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - counts.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Application counts per mix entry of one experiment point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPoint {
    pub index: usize,
    pub total: usize,
    pub counts: Vec<usize>,
}

impl ScenarioPoint {
    pub fn id(&self) -> String {
        format!("p{:02}-n{:03}", self.index, self.total)
    }
}

impl Scenario {
    /// Invariant violations, one message each.
    pub fn validate(&self) -> Vec<String> {
        let mut out: Vec<String> = topology::validate(&self.topology)
            .iter()
            .map(|v| v.to_string())
            .collect();
        let s = &self.solver;
        if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
            out.push(format!("solver.epsilon must be >= 0, found {}", s.epsilon));
        }
        if s.k_paths == 0 {
            out.push("solver.k_paths must be >= 1".into());
        }
        let m = &self.sim;
        let mut probe = crate::sim::SimConfig::new(1.0, m.base_delay_ms.unwrap_or(0.0), m.duration_s, m.warmup_s);
        probe.buffer_bytes = m.buffer_bytes;
        probe.start_jitter_ms = m.start_jitter_ms;
        probe.access_rate_kbps = m.access_rate_kbps;
        if let Err(e) = probe.validate() {
            out.push(format!("sim: {e}"));
        }
        if !(0.0..=100.0).contains(&m.percentile) {
            out.push(format!("sim.percentile must be in [0, 100], found {}", m.percentile));
        }
        for (i, a) in self.applications.iter().enumerate() {
            let at = format!("application entry {i} ({})", a.app_type);
            if a.class.is_none() && a.grid.is_none() {
                out.push(format!("{at}: needs a class or a grid"));
            }
            if a.app_type.is_empty() {
                out.push(format!("{at}: app_type is empty"));
            }
            for n in [&a.src, &a.dst] {
                if !self.topology.nodes.contains(n) {
                    out.push(format!("{at}: unknown node {n}"));
                }
            }
            if a.src == a.dst {
                out.push(format!("{at}: src equals dst"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.totals.windows(2).any(|w| w[0] >= w[1]) {
                out.push("sweep.totals must be strictly ascending".into());
            }
            if sw.totals.is_empty() {
                out.push("sweep.totals is empty".into());
            }
            if self.applications.iter().all(|a| a.count == 0) && sw.totals.iter().any(|&t| t > 0) {
                out.push("sweep needs a mix with a positive count to take ratios from".into());
            }
        }
        out
    }

    /// Experiment points: one per sweep total, or the mix as written.
    pub fn points(&self) -> Vec<ScenarioPoint> {
        let base: Vec<usize> = self.applications.iter().map(|a| a.count).collect();
        match &self.sweep {
            None => vec![ScenarioPoint {
                index: 0,
                total: base.iter().sum(),
                counts: base,
            }],
            Some(sw) => sw
                .totals
                .iter()
                .enumerate()
                .map(|(index, &total)| ScenarioPoint {
                    index,
                    total,
                    counts: expand_counts(&base, total),
                })
                .collect(),
        }
    }

    /// The allocation problem of a point, with the builtin class of every
    /// application. Ids are `<type>-<nnn>`, numbered per type.
    pub fn problem(&self, point: &ScenarioPoint) -> (AllocationProblem, Vec<Option<AppClass>>) {
        let mut next: BTreeMap<&str, usize> = BTreeMap::new();
        let mut apps = Vec::new();
        let mut classes = Vec::new();
        for ((mix, &count), grid) in self.applications.iter().zip(&point.counts).zip(&self.grids) {
            for _ in 0..count {
                let n = next.entry(&mix.app_type).or_insert(0);
                apps.push(ApplicationFlow {
                    id: format!("{}-{:03}", mix.app_type, n),
                    app_type: mix.app_type.clone(),
                    src: mix.src.clone(),
                    dst: mix.dst.clone(),
                    grid: grid.clone(),
                });
                classes.push(mix.class);
                *n += 1;
            }
        }
        let mut p = AllocationProblem::new(self.topology.clone(), apps);
        p.epsilon = self.solver.epsilon;
        p.k_paths = self.solver.k_paths;
        p.per_type_equal = self.solver.per_type_equal;
        (p, classes)
    }

    /// Sweep-free copy with the points' totals written out, as the `sweep`
    /// subcommand prints them.
    pub fn expanded(&self) -> Vec<(ScenarioPoint, Scenario)> {
        self.points()
            .into_iter()
            .map(|p| {
                let mut s = self.clone();
                s.sweep = None;
                for (a, &c) in s.applications.iter_mut().zip(&p.counts) {
                    a.count = c;
                }
                s.name = format!("{}/{}", self.name, p.id());
                (p, s)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
