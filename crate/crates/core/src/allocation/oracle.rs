//! Exhaustive enumeration, used as ground truth for the exact search.

use std::collections::BTreeMap;
use std::time::Instant;

use super::model::{all_candidate_paths, group_units, id_rank, lex_key};
use super::{
    build_result, path_delay, tp_milli, utility_key, AllocationError, AllocationProblem, AllocationResult, IndexChoice,
    InfeasibilityClass, Optimality, SolverStats, DELAY_TOLERANCE_MS,
};
use crate::topology::{candidate_paths, DelayCurve};

/// Largest number of complete assignments the oracle will enumerate.
pub const ORACLE_LIMIT: f64 = 1e7;

/// Number of complete assignments: grid points per shared choice times
/// candidate paths per application.
pub fn oracle_search_space(problem: &AllocationProblem) -> f64 {
    let grids: f64 = group_units(problem)
        .iter()
        .map(|u| problem.apps[u[0]].grid.len() as f64)
        .product();
    let paths: f64 = problem
        .apps
        .iter()
        .map(|a| candidate_paths(&problem.topology, &a.src, &a.dst, problem.k_paths).len() as f64)
        .product();
    grids * paths
}

struct Enumeration<'a> {
    problem: &'a AllocationProblem,
    units: Vec<Vec<usize>>,
    unit_of: Vec<usize>,
    path_links: Vec<Vec<Vec<usize>>>,
    curves: Vec<&'a DelayCurve>,
    caps: Vec<i64>,
}

/// Digit layout: one grid digit per unit, then one path digit per app.
/// Utility sum key, throughput sum, lexicographic key and the choice.
type Candidate = (i64, i64, Vec<(i64, i64, i64)>, Vec<IndexChoice>);

struct Outcome {
    capacity_ok: bool,
    feasible: bool,
    min_u: i64,
    usum: i64,
    tpsum: i64,
}

impl Enumeration<'_> {
    fn radices(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.units.iter().map(|u| self.problem.apps[u[0]].grid.len()).collect();
        r.extend(self.path_links.iter().map(|p| p.len()));
        r
    }

    fn choice(&self, digits: &[usize]) -> Vec<IndexChoice> {
        let nu = self.units.len();
        (0..self.problem.apps.len())
            .map(|a| {
                let g = digits[self.unit_of[a]];
                let n_d = self.problem.apps[self.units[self.unit_of[a]][0]].grid.n_d();
                (g / n_d, g % n_d, digits[nu + a])
            })
            .collect()
    }

    fn check(&self, choice: &[IndexChoice], usage: &mut [i64]) -> Outcome {
        usage.iter_mut().for_each(|x| *x = 0);
        let mut min_u = i64::MAX;
        let mut usum = 0;
        let mut tpsum = 0;
        for (a, &(t, d, p)) in choice.iter().enumerate() {
            let g = &self.problem.apps[a].grid;
            let tp = tp_milli(g.tp_levels[t]);
            let u = utility_key(g.values[t][d]);
            for &l in &self.path_links[a][p] {
                usage[l] += tp;
            }
            min_u = min_u.min(u);
            usum += u;
            tpsum += tp;
        }
        let capacity_ok = usage.iter().zip(&self.caps).all(|(u, c)| u <= c);
        let feasible = capacity_ok
            && choice.iter().enumerate().all(|(a, &(_, d, p))| {
                let budget = self.problem.apps[a].grid.d_levels[d];
                path_delay(&self.curves, &self.path_links[a][p], usage) <= budget + DELAY_TOLERANCE_MS
            });
        Outcome {
            capacity_ok,
            feasible,
            min_u,
            usum,
            tpsum,
        }
    }

    fn for_each(&self, mut f: impl FnMut(&[IndexChoice], &Outcome)) {
        let radices = self.radices();
        let mut digits = vec![0usize; radices.len()];
        let mut usage = vec![0i64; self.caps.len()];
        loop {
            let choice = self.choice(&digits);
            let out = self.check(&choice, &mut usage);
            f(&choice, &out);
            let mut i = 0;
            loop {
                if i == digits.len() {
                    return;
                }
                digits[i] += 1;
                if digits[i] < radices[i] {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
        }
    }
}

/// Enumerates every assignment and applies the same objectives and
/// tie-break order as [`super::solve`].
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<AllocationResult, AllocationError> {
    let start = Instant::now();
    let problems = problem.validate();
    if !problems.is_empty() {
        return Err(AllocationError::Invalid(problems));
    }
    let size = oracle_search_space(problem);
    if size > ORACLE_LIMIT {
        return Err(AllocationError::TooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    let paths = all_candidate_paths(problem)?;
    let index: BTreeMap<_, _> = problem.topology.links.keys().enumerate().map(|(i, k)| (k, i)).collect();
    let units = group_units(problem);
    let mut unit_of = vec![0; problem.apps.len()];
    for (k, u) in units.iter().enumerate() {
        for &a in u {
            unit_of[a] = k;
        }
    }
    let e = Enumeration {
        problem,
        unit_of,
        path_links: paths
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        problem
                            .topology
                            .path_links(p)
                            .unwrap()
                            .iter()
                            .map(|k| index[k])
                            .collect()
                    })
                    .collect()
            })
            .collect(),
        units,
        curves: problem.topology.links.values().map(|l| &l.delay_curve).collect(),
        caps: problem
            .topology
            .links
            .values()
            .map(|l| tp_milli(l.capacity_kbps))
            .collect(),
    };
    let mut count = 0u64;
    let mut any_capacity = false;
    let mut best_min: Option<i64> = None;
    e.for_each(|_, o| {
        count += 1;
        any_capacity |= o.capacity_ok;
        if o.feasible {
            best_min = Some(best_min.map_or(o.min_u, |b| b.max(o.min_u)));
        }
    });
    let Some(uv1) = best_min else {
        let class = if any_capacity {
            InfeasibilityClass::Delay
        } else {
            InfeasibilityClass::Capacity
        };
        return Err(AllocationError::Infeasible {
            class,
            detail: format!("none of {count} assignments is feasible"),
        });
    };
    let floor = uv1 - utility_key(problem.epsilon);
    let rank = id_rank(problem);
    let mut best: Option<Candidate> = None;
    let mut witness_u = f64::INFINITY;
    e.for_each(|choice, o| {
        if !o.feasible || o.min_u < floor {
            return;
        }
        if o.min_u == uv1 && witness_u.is_infinite() {
            witness_u = choice
                .iter()
                .enumerate()
                .map(|(a, &(t, d, _))| problem.apps[a].grid.values[t][d])
                .fold(f64::INFINITY, f64::min);
        }
        let key = (-o.usum, o.tpsum);
        let replace = match &best {
            None => true,
            Some((bu, bt, blex, _)) => {
                let bk = (-*bu, *bt);
                key < bk || (key == bk && lex_key(&rank, choice) < *blex)
            }
        };
        if replace {
            best = Some((o.usum, o.tpsum, lex_key(&rank, choice), choice.to_vec()));
        }
    });
    let (_, _, _, choice) = best.expect("the max-min witness satisfies the stage-2 floor");
    let uv1 = if problem.apps.is_empty() { 0.0 } else { witness_u };
    Ok(build_result(
        problem,
        &paths,
        &choice,
        uv1,
        SolverStats {
            nodes_explored: 2 * count,
            optimality: Optimality::Proven,
            wall_time: start.elapsed(),
        },
    ))
}
