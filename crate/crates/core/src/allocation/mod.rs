//! Two-stage utility allocation: each application gets one (throughput,
//! delay budget) grid point and one candidate path. Stage 1 maximizes the
//! minimum utility, stage 2 maximizes the utility sum while keeping every
//! application within `epsilon` of the stage-1 minimum.

mod heuristic;
mod model;
mod oracle;
mod search;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{self, link_delay, DelayCurve, NodeId, Path, Topology, TopologyError};
use crate::utility::UtilityGrid;

pub use heuristic::solve_heuristic;
pub use oracle::{brute_force_oracle, oracle_search_space, ORACLE_LIMIT};
pub use search::{solve, solve_stage1, solve_stage2};

/// Tolerance on the end-to-end delay constraint, ms.
pub const DELAY_TOLERANCE_MS: f64 = 1e-9;

/// One unidirectional application flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationFlow {
    pub id: String,
    /// Class/intent tag; flows sharing it share a grid point when
    /// `per_type_equal` is set.
    pub app_type: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub grid: UtilityGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub topology: Topology,
    pub apps: Vec<ApplicationFlow>,
    pub epsilon: f64,
    pub k_paths: usize,
    pub per_type_equal: bool,
    /// Largest delay level accepted in a grid, ms.
    pub d_max: f64,
}

impl AllocationProblem {
    pub const DEFAULT_EPSILON: f64 = 0.3;
    pub const DEFAULT_K_PATHS: usize = 4;
    pub const DEFAULT_D_MAX: f64 = 100_000.0;

    pub fn new(topology: Topology, apps: Vec<ApplicationFlow>) -> Self {
        Self {
            topology,
            apps,
            epsilon: Self::DEFAULT_EPSILON,
            k_paths: Self::DEFAULT_K_PATHS,
            per_type_equal: false,
            d_max: Self::DEFAULT_D_MAX,
        }
    }

    /// Structural problems that make the instance unsolvable as posed.
    pub fn validate(&self) -> Vec<String> {
        let mut out: Vec<String> = topology::validate(&self.topology)
            .iter()
            .map(|v| v.to_string())
            .collect();
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            out.push(format!("epsilon must be >= 0, found {}", self.epsilon));
        }
        if self.k_paths == 0 {
            out.push("k_paths must be >= 1".into());
        }
        let mut ids = BTreeSet::new();
        let mut dims: BTreeMap<&str, (usize, usize, &str)> = BTreeMap::new();
        for app in &self.apps {
            if !ids.insert(app.id.as_str()) {
                out.push(format!("duplicate application id {}", app.id));
            }
            if app.src == app.dst {
                out.push(format!("application {}: src equals dst", app.id));
            }
            for n in [&app.src, &app.dst] {
                if !self.topology.nodes.contains(n) {
                    out.push(format!("application {}: unknown node {n}", app.id));
                }
            }
            for (_, _, msg) in app.grid.violations() {
                out.push(format!("application {}: {msg}", app.id));
            }
            if app.grid.d_levels.iter().any(|&d| d > self.d_max) {
                out.push(format!(
                    "application {}: delay level above d_max {}",
                    app.id, self.d_max
                ));
            }
            if self.per_type_equal {
                let shape = (app.grid.n_tp(), app.grid.n_d(), app.id.as_str());
                let first = *dims.entry(app.app_type.as_str()).or_insert(shape);
                if (first.0, first.1) != (shape.0, shape.1) {
                    out.push(format!(
                        "applications {} and {} share type {} but their grids differ in size",
                        first.2, app.id, app.app_type
                    ));
                }
            }
        }
        out
    }
}

/// Per-application decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub tp_index: usize,
    pub d_index: usize,
    pub path: Path,
}

/// Decisions for every application, aligned with `AllocationProblem::apps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ConstraintViolation {
    Structure {
        app: String,
        message: String,
    },
    Capacity {
        link: (NodeId, NodeId),
        usage_kbps: f64,
        capacity_kbps: f64,
    },
    Delay {
        app: String,
        delay_ms: f64,
        budget_ms: f64,
    },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Structure { app, message } => write!(f, "application {app}: {message}"),
            Self::Capacity {
                link,
                usage_kbps,
                capacity_kbps,
            } => write!(
                f,
                "link {}->{}: usage {usage_kbps} kbps exceeds capacity {capacity_kbps}",
                link.0, link.1
            ),
            Self::Delay {
                app,
                delay_ms,
                budget_ms,
            } => write!(f, "application {app}: delay {delay_ms} ms exceeds budget {budget_ms}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity_kbps: f64,
    pub usage_kbps: f64,
    pub delay_ms: f64,
}

/// Outcome of checking a concrete assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub feasible: bool,
    pub violations: Vec<ConstraintViolation>,
    pub links: Vec<LinkState>,
    pub app_delay_ms: Vec<f64>,
    pub utilities: Vec<f64>,
}

/// Throughput in integer milli-kbps; capacity sums are exact in this unit.
pub(crate) fn tp_milli(kbps: f64) -> i64 {
    (kbps * 1000.0).round() as i64
}

/// Utility as an integer key, exact for comparisons and sums.
pub(crate) fn utility_key(u: f64) -> i64 {
    (u * 1e9).round() as i64
}

/// Delay of a link carrying `milli` milli-kbps.
pub(crate) fn link_delay_milli(curve: &DelayCurve, milli: i64) -> f64 {
    let usage = (milli as f64 / 1000.0).min(curve.max_usage());
    link_delay(curve, usage).unwrap_or(f64::INFINITY)
}

/// End-to-end delay over `links`, summed in path order.
pub(crate) fn path_delay(curves: &[&DelayCurve], links: &[usize], usage: &[i64]) -> f64 {
    links.iter().map(|&l| link_delay_milli(curves[l], usage[l])).sum()
}

/// Checks capacity and delay constraints for `assignment` and reports every
/// intermediate quantity.
pub fn evaluate(problem: &AllocationProblem, assignment: &Assignment) -> Evaluation {
    let keys: Vec<_> = problem.topology.links.keys().cloned().collect();
    let index: BTreeMap<_, _> = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
    let curves: Vec<&DelayCurve> = problem.topology.links.values().map(|l| &l.delay_curve).collect();
    let mut violations = Vec::new();
    let mut usage = vec![0i64; keys.len()];
    let mut app_links = Vec::with_capacity(problem.apps.len());
    let mut utilities = Vec::with_capacity(problem.apps.len());
    let mut budgets = Vec::with_capacity(problem.apps.len());
    for (i, app) in problem.apps.iter().enumerate() {
        let structure = |message: String| ConstraintViolation::Structure {
            app: app.id.clone(),
            message,
        };
        let Some(choice) = assignment.choices.get(i) else {
            violations.push(structure("no choice given".into()));
            app_links.push(Vec::new());
            utilities.push(f64::NAN);
            budgets.push(f64::INFINITY);
            continue;
        };
        let grid = &app.grid;
        let (tp, d, u) = match (grid.tp_levels.get(choice.tp_index), grid.d_levels.get(choice.d_index)) {
            (Some(&tp), Some(&d)) => (tp, d, grid.values[choice.tp_index][choice.d_index]),
            _ => {
                violations.push(structure(format!(
                    "grid index ({}, {}) out of range",
                    choice.tp_index, choice.d_index
                )));
                (0.0, f64::INFINITY, f64::NAN)
            }
        };
        utilities.push(u);
        budgets.push(d);
        let path = &choice.path;
        let distinct: BTreeSet<_> = path.iter().collect();
        if path.first() != Some(&app.src) || path.last() != Some(&app.dst) || distinct.len() != path.len() {
            violations.push(structure("path is not a loop-free src-dst walk".into()));
        }
        let links: Vec<usize> = match problem.topology.path_links(path) {
            Some(ks) => ks.iter().map(|k| index[k]).collect(),
            None => {
                violations.push(structure("path uses a missing link".into()));
                Vec::new()
            }
        };
        for &l in &links {
            usage[l] += tp_milli(tp);
        }
        app_links.push(links);
    }
    let links: Vec<LinkState> = keys
        .iter()
        .zip(problem.topology.links.values())
        .zip(&usage)
        .map(|(((from, to), link), &m)| LinkState {
            from: from.clone(),
            to: to.clone(),
            capacity_kbps: link.capacity_kbps,
            usage_kbps: m as f64 / 1000.0,
            delay_ms: link_delay_milli(&link.delay_curve, m),
        })
        .collect();
    for (state, (&m, link)) in links.iter().zip(usage.iter().zip(problem.topology.links.values())) {
        if m > tp_milli(link.capacity_kbps) {
            violations.push(ConstraintViolation::Capacity {
                link: (state.from.clone(), state.to.clone()),
                usage_kbps: state.usage_kbps,
                capacity_kbps: link.capacity_kbps,
            });
        }
    }
    let mut app_delay_ms = Vec::with_capacity(problem.apps.len());
    for ((app, ls), &budget) in problem.apps.iter().zip(&app_links).zip(&budgets) {
        let ad = path_delay(&curves, ls, &usage);
        if ad > budget + DELAY_TOLERANCE_MS {
            violations.push(ConstraintViolation::Delay {
                app: app.id.clone(),
                delay_ms: ad,
                budget_ms: budget,
            });
        }
        app_delay_ms.push(ad);
    }
    Evaluation {
        feasible: violations.is_empty(),
        violations,
        links,
        app_delay_ms,
        utilities,
    }
}

/// Piecewise-linear encoding of a usage value: one active segment and the
/// position inside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEncoding {
    /// One entry per segment; exactly one is 1.
    pub selector: Vec<u8>,
    /// Position inside each segment in [0, selector].
    pub scale: Vec<f64>,
    pub usage: f64,
    pub delay: f64,
}

pub fn encode_delay_segments(curve: &DelayCurve, usage: f64) -> Result<SegmentEncoding, TopologyError> {
    // domain and shape checks are shared with the interpolator
    link_delay(curve, usage)?;
    let n = curve.usage_points.len() - 1;
    let p = curve.segment_of(usage);
    let (u0, u1) = (curve.usage_points[p], curve.usage_points[p + 1]);
    let s = if usage == u0 {
        0.0
    } else if usage == u1 {
        1.0
    } else {
        (usage - u0) / (u1 - u0)
    };
    let mut selector = vec![0u8; n];
    let mut scale = vec![0.0; n];
    selector[p] = 1;
    scale[p] = s;
    let mut rec_u = 0.0;
    let mut rec_d = 0.0;
    for q in 0..n {
        let l = selector[q] as f64;
        let (du, dd) = (
            curve.usage_points[q + 1] - curve.usage_points[q],
            curve.delay_points[q + 1] - curve.delay_points[q],
        );
        rec_u += l * curve.usage_points[q] + scale[q] * du;
        rec_d += l * curve.delay_points[q] + scale[q] * dd;
    }
    Ok(SegmentEncoding {
        selector,
        scale,
        usage: rec_u,
        delay: rec_d,
    })
}

/// Which kind of constraint makes an instance infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityClass {
    PathExistence,
    Capacity,
    Delay,
}

impl fmt::Display for InfeasibilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PathExistence => "path existence",
            Self::Capacity => "capacity",
            Self::Delay => "delay",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("invalid problem: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("infeasible ({class}): {detail}")]
    Infeasible { class: InfeasibilityClass, detail: String },
    #[error("search space of {size:.3e} assignments exceeds the oracle limit {limit:.0e}")]
    TooLarge { size: f64, limit: f64 },
}

/// Result row for one application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppAllocation {
    pub id: String,
    #[serde(rename = "type")]
    pub app_type: String,
    pub tp_index: usize,
    pub d_index: usize,
    pub tp_kbps: f64,
    pub d_ms: f64,
    pub path: Path,
    pub path_index: usize,
    pub delay_ms: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimality {
    Proven,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes_explored: u64,
    pub optimality: Optimality,
    /// Not serialized so that reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub uv_min1: f64,
    pub uv_min2: f64,
    pub utility_sum: f64,
    pub apps: Vec<AppAllocation>,
    pub links: Vec<LinkState>,
    pub stats: SolverStats,
}

impl AllocationResult {
    pub fn assignment(&self) -> Assignment {
        Assignment {
            choices: self
                .apps
                .iter()
                .map(|a| Choice {
                    tp_index: a.tp_index,
                    d_index: a.d_index,
                    path: a.path.clone(),
                })
                .collect(),
        }
    }

    /// Index-level signature used to compare solvers exactly.
    pub fn signature(&self) -> (i64, i64, i64, Vec<(usize, usize, usize)>) {
        (
            utility_key(self.uv_min1),
            utility_key(self.uv_min2),
            self.apps.iter().map(|a| utility_key(a.utility)).sum(),
            self.apps
                .iter()
                .map(|a| (a.tp_index, a.d_index, a.path_index))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation result serializes")
    }
}

/// Per-application choice by candidate path index.
pub(crate) type IndexChoice = (usize, usize, usize);

/// Builds the public result for a choice vector known to be feasible.
pub(crate) fn build_result(
    problem: &AllocationProblem,
    paths: &[Vec<Path>],
    choice: &[IndexChoice],
    uv_min1: f64,
    stats: SolverStats,
) -> AllocationResult {
    let assignment = Assignment {
        choices: choice
            .iter()
            .zip(paths)
            .map(|(&(t, d, p), ps)| Choice {
                tp_index: t,
                d_index: d,
                path: ps[p].clone(),
            })
            .collect(),
    };
    let eval = evaluate(problem, &assignment);
    debug_assert!(eval.feasible, "solver produced {:?}", eval.violations);
    let apps: Vec<AppAllocation> = problem
        .apps
        .iter()
        .zip(choice)
        .zip(assignment.choices)
        .zip(eval.app_delay_ms.iter().zip(&eval.utilities))
        .map(|(((app, &(t, d, p)), c), (&delay, &u))| AppAllocation {
            id: app.id.clone(),
            app_type: app.app_type.clone(),
            tp_index: t,
            d_index: d,
            tp_kbps: app.grid.tp_levels[t],
            d_ms: app.grid.d_levels[d],
            path: c.path,
            path_index: p,
            delay_ms: delay,
            utility: u,
        })
        .collect();
    let uv_min2 = apps.iter().map(|a| a.utility).fold(f64::INFINITY, f64::min);
    let (uv_min1, uv_min2) = if apps.is_empty() {
        (0.0, 0.0)
    } else {
        (uv_min1, uv_min2)
    };
    // sum in id order so that the value does not depend on input order
    let mut by_id: Vec<&AppAllocation> = apps.iter().collect();
    by_id.sort_by(|a, b| a.id.cmp(&b.id));
    let utility_sum = by_id.iter().map(|a| a.utility).sum();
    AllocationResult {
        uv_min1,
        uv_min2,
        utility_sum,
        apps,
        links: eval.links,
        stats,
    }
}
