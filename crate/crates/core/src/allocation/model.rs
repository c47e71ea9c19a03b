//! Integer view of an allocation problem shared by the exact search and the
//! heuristic.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{
    path_delay, tp_milli, utility_key, AllocationError, AllocationProblem, IndexChoice, InfeasibilityClass,
    DELAY_TOLERANCE_MS,
};
use crate::topology::{candidate_paths, DelayCurve, Path};

/// One grid point for every member of a unit.
#[derive(Debug, Clone)]
pub(crate) struct Opt {
    pub tp_idx: usize,
    pub d_idx: usize,
    /// Per member, milli-kbps.
    pub tp: Vec<i64>,
    /// Per member utility keys.
    pub u: Vec<i64>,
    /// Per member delay budgets, ms.
    pub d: Vec<f64>,
    pub usum: i64,
    pub tpsum: i64,
    pub min_u: i64,
    /// Per member, candidate path indices usable at this grid point.
    pub paths: Vec<Vec<usize>>,
    /// Load this option puts on links every member path must cross.
    pub forced: Vec<(usize, i64)>,
}

/// Applications that share one grid choice.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub members: Vec<usize>,
    pub options: Vec<Opt>,
}

pub(crate) struct Model<'a> {
    pub problem: &'a AllocationProblem,
    pub curves: Vec<&'a DelayCurve>,
    pub caps: Vec<i64>,
    /// Links whose delay does not depend on load.
    pub flat: Vec<bool>,
    pub paths: Vec<Vec<Path>>,
    pub path_links: Vec<Vec<Vec<usize>>>,
    /// Position of each application in id order.
    pub rank: Vec<usize>,
    /// Units in search order.
    pub units: Vec<Unit>,
    pub ignore_delay: bool,
}

/// Candidate paths per application, or the first application without one.
pub(crate) fn all_candidate_paths(problem: &AllocationProblem) -> Result<Vec<Vec<Path>>, AllocationError> {
    problem
        .apps
        .iter()
        .map(|a| {
            let ps = candidate_paths(&problem.topology, &a.src, &a.dst, problem.k_paths);
            if ps.is_empty() {
                Err(AllocationError::Infeasible {
                    class: InfeasibilityClass::PathExistence,
                    detail: format!("application {}: no path from {} to {}", a.id, a.src, a.dst),
                })
            } else {
                Ok(ps)
            }
        })
        .collect()
}

/// Groups applications into units: one per app, or one per app type.
pub(crate) fn group_units(problem: &AllocationProblem) -> Vec<Vec<usize>> {
    if !problem.per_type_equal {
        return (0..problem.apps.len()).map(|a| vec![a]).collect();
    }
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in problem.apps.iter().enumerate() {
        by_type.entry(&a.app_type).or_default().push(i);
    }
    by_type.into_values().collect()
}

pub(crate) fn id_rank(problem: &AllocationProblem) -> Vec<usize> {
    let mut order: Vec<usize> = (0..problem.apps.len()).collect();
    order.sort_by(|&a, &b| problem.apps[a].id.cmp(&problem.apps[b].id));
    let mut rank = vec![0; order.len()];
    for (r, a) in order.into_iter().enumerate() {
        rank[a] = r;
    }
    rank
}

/// Lexicographic tie-break vector: per app in id order,
/// (-tp_index, d_index, path_index).
pub(crate) fn lex_key(rank: &[usize], choice: &[IndexChoice]) -> Vec<(i64, i64, i64)> {
    let mut v = vec![(0, 0, 0); choice.len()];
    for (a, &(t, d, p)) in choice.iter().enumerate() {
        v[rank[a]] = (-(t as i64), d as i64, p as i64);
    }
    v
}

/// Total order on complete assignments; smaller is better.
pub(crate) fn compare_keys(a: (i64, i64, &[(i64, i64, i64)]), b: (i64, i64, &[(i64, i64, i64)])) -> Ordering {
    (-a.0, a.1).cmp(&(-b.0, b.1)).then_with(|| a.2.cmp(b.2))
}

impl<'a> Model<'a> {
    pub fn new(problem: &'a AllocationProblem, ignore_delay: bool) -> Result<Self, AllocationError> {
        let problems = problem.validate();
        if !problems.is_empty() {
            return Err(AllocationError::Invalid(problems));
        }
        let links = &problem.topology.links;
        let index: BTreeMap<_, _> = links.keys().enumerate().map(|(i, k)| (k, i)).collect();
        let curves: Vec<&DelayCurve> = links.values().map(|l| &l.delay_curve).collect();
        let caps: Vec<i64> = links.values().map(|l| tp_milli(l.capacity_kbps)).collect();
        let flat = curves
            .iter()
            .map(|c| c.delay_points.windows(2).all(|w| w[0] == w[1]))
            .collect();
        let paths = all_candidate_paths(problem)?;
        let path_links: Vec<Vec<Vec<usize>>> = paths
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        problem
                            .topology
                            .path_links(p)
                            .expect("candidate paths follow links")
                            .iter()
                            .map(|k| index[k])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut model = Model {
            problem,
            curves,
            caps,
            flat,
            paths,
            path_links,
            rank: id_rank(problem),
            units: Vec::new(),
            ignore_delay,
        };
        let mut units: Vec<Unit> = group_units(problem)
            .into_iter()
            .map(|members| {
                let options = model.unit_options(&members);
                Unit { members, options }
            })
            .collect();
        // heaviest demand first; ties by first member id
        units.sort_by_key(|u| {
            let max_tp: i64 = u
                .members
                .iter()
                .map(|&a| tp_milli(*problem.apps[a].grid.tp_levels.last().unwrap()))
                .sum();
            (std::cmp::Reverse(max_tp), model.rank[u.members[0]])
        });
        model.units = units;
        Ok(model)
    }

    /// Delay of `path` when only this application loads it.
    fn solo_delay(&self, links: &[usize], tp: i64) -> f64 {
        let mut usage = vec![0; self.caps.len()];
        for &l in links {
            usage[l] = tp;
        }
        path_delay(&self.curves, links, &usage)
    }

    /// Largest delay any candidate path of `app` can reach; budgets above it
    /// never bind.
    fn delay_cap(&self, app: usize) -> f64 {
        if self.ignore_delay {
            return f64::INFINITY;
        }
        self.path_links[app]
            .iter()
            .map(|ls| path_delay(&self.curves, ls, &self.caps))
            .fold(0.0, f64::max)
    }

    fn unit_options(&self, members: &[usize]) -> Vec<Opt> {
        let apps = &self.problem.apps;
        let g0 = &apps[members[0]].grid;
        let dcap: Vec<f64> = members.iter().map(|&a| self.delay_cap(a)).collect();
        let mut opts = Vec::new();
        for tp_idx in 0..g0.n_tp() {
            'point: for d_idx in 0..g0.n_d() {
                let mut o = Opt {
                    tp_idx,
                    d_idx,
                    tp: Vec::new(),
                    u: Vec::new(),
                    d: Vec::new(),
                    usum: 0,
                    tpsum: 0,
                    min_u: i64::MAX,
                    paths: Vec::new(),
                    forced: Vec::new(),
                };
                for &a in members {
                    let g = &apps[a].grid;
                    let tp = tp_milli(g.tp_levels[tp_idx]);
                    let d = g.d_levels[d_idx];
                    let u = utility_key(g.values[tp_idx][d_idx]);
                    let usable: Vec<usize> = self.path_links[a]
                        .iter()
                        .enumerate()
                        .filter(|(_, ls)| {
                            ls.iter().all(|&l| tp <= self.caps[l])
                                && (self.ignore_delay || self.solo_delay(ls, tp) <= d + DELAY_TOLERANCE_MS)
                        })
                        .map(|(p, _)| p)
                        .collect();
                    if usable.is_empty() {
                        continue 'point;
                    }
                    o.tp.push(tp);
                    o.u.push(u);
                    o.d.push(d);
                    o.usum += u;
                    o.tpsum += tp;
                    o.min_u = o.min_u.min(u);
                    o.paths.push(usable);
                }
                let mut forced: BTreeMap<usize, i64> = BTreeMap::new();
                for (m, &a) in members.iter().enumerate() {
                    let all = &self.path_links[a];
                    let usable = &o.paths[m];
                    for &l in &all[usable[0]] {
                        if usable.iter().all(|&p| all[p].contains(&l)) {
                            *forced.entry(l).or_default() += o.tp[m];
                        }
                    }
                }
                o.forced = forced.into_iter().collect();
                opts.push(o);
            }
        }
        let eff = |o: &Opt, m: usize| o.d[m].min(dcap[m]);
        let better = |p: &Opt, q: &Opt| {
            (-p.usum, p.tpsum, -(p.tp_idx as i64), p.d_idx) < (-q.usum, q.tpsum, -(q.tp_idx as i64), q.d_idx)
        };
        let dominates = |p: &Opt, q: &Opt| {
            better(p, q) && (0..members.len()).all(|m| p.tp[m] <= q.tp[m] && p.u[m] >= q.u[m] && eff(p, m) >= eff(q, m))
        };
        let keep: Vec<bool> = opts.iter().map(|q| !opts.iter().any(|p| dominates(p, q))).collect();
        let mut kept: Vec<Opt> = opts.into_iter().zip(keep).filter_map(|(o, k)| k.then_some(o)).collect();
        kept.sort_by_key(|o| (-o.usum, o.tpsum, -(o.tp_idx as i64), o.d_idx));
        kept
    }

    pub fn n_apps(&self) -> usize {
        self.problem.apps.len()
    }

    /// Sorted distinct utility keys any application can reach.
    pub fn utility_levels(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self
            .units
            .iter()
            .flat_map(|u| u.options.iter().flat_map(|o| o.u.iter().copied()))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}
