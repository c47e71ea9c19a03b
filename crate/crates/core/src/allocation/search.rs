//! Exact depth-first search over the quantized choice space: a binary search
//! of feasibility checks for the max-min stage and branch-and-bound for the
//! utility-sum stage.

use std::cmp::Ordering;
use std::time::Instant;

use super::model::{compare_keys, lex_key, Model};
use super::{
    build_result, path_delay, utility_key, AllocationError, AllocationProblem, AllocationResult, Assignment,
    IndexChoice, InfeasibilityClass, Optimality, SolverStats, DELAY_TOLERANCE_MS,
};

/// Best complete assignment found so far.
struct Incumbent {
    usum: i64,
    tpsum: i64,
    choice: Vec<IndexChoice>,
    lex: Vec<(i64, i64, i64)>,
}

/// Concave-hull pieces of one link's knapsack relaxation over a suffix of
/// units.
struct LinkRelaxation {
    link: usize,
    /// Per suffix start: value of the lightest choices, their total weight,
    /// and the hull increments sorted by decreasing value per weight.
    base: Vec<i64>,
    min_w: Vec<i64>,
    segs: Vec<Vec<(i64, i64)>>,
}

struct Search<'m, 'a> {
    m: &'m Model<'a>,
    optimize: bool,
    /// Admissible options per unit position, in trial order.
    adm: Vec<Vec<usize>>,
    suffix_min_w: Vec<Vec<i64>>,
    suffix_min_tp: Vec<i64>,
    relax: Vec<LinkRelaxation>,
    usage: Vec<i64>,
    on_link: Vec<Vec<usize>>,
    /// Per app: (option index within its unit, member position, path index).
    placed: Vec<Option<(usize, usize, usize)>>,
    app_unit: Vec<usize>,
    budget: Vec<f64>,
    stamp: Vec<u64>,
    stamp_now: u64,
    cur_usum: i64,
    cur_tp: i64,
    best: Option<Incumbent>,
    nodes: u64,
    done: bool,
}

impl<'m, 'a> Search<'m, 'a> {
    /// Prepares a search restricted to options whose members all reach `tau`.
    /// Returns `None` if some unit has no admissible option.
    fn new(m: &'m Model<'a>, tau: i64, optimize: bool) -> Option<Self> {
        let n_links = m.caps.len();
        let mut adm = Vec::with_capacity(m.units.len());
        for u in &m.units {
            let mut idx: Vec<usize> = (0..u.options.len()).filter(|&o| u.options[o].min_u >= tau).collect();
            if idx.is_empty() {
                return None;
            }
            if !optimize {
                // lightest and loosest first: most likely to fit
                idx.sort_by_key(|&o| {
                    let x = &u.options[o];
                    (x.tpsum, std::cmp::Reverse(x.d_idx), x.tp_idx)
                });
            }
            adm.push(idx);
        }
        let n_units = m.units.len();
        let mut suffix_min_w = vec![vec![0i64; n_links]; n_units + 1];
        let mut suffix_min_tp = vec![0i64; n_units + 1];
        for k in (0..n_units).rev() {
            let unit = &m.units[k];
            let mut mins = vec![i64::MAX; n_links];
            let mut touched = vec![false; n_links];
            for &o in &adm[k] {
                let opt = &unit.options[o];
                let mut w = vec![0i64; n_links];
                for &(l, x) in &opt.forced {
                    w[l] = x;
                    touched[l] = true;
                }
                for l in 0..n_links {
                    mins[l] = mins[l].min(w[l]);
                }
            }
            for l in 0..n_links {
                let add = if touched[l] { mins[l] } else { 0 };
                suffix_min_w[k][l] = suffix_min_w[k + 1][l] + add;
            }
            let min_tp = adm[k].iter().map(|&o| unit.options[o].tpsum).min().unwrap();
            suffix_min_tp[k] = suffix_min_tp[k + 1] + min_tp;
        }
        let relax = if optimize { relaxations(m, &adm) } else { Vec::new() };
        let n = m.n_apps();
        let mut app_unit = vec![0; n];
        for (k, u) in m.units.iter().enumerate() {
            for &a in &u.members {
                app_unit[a] = k;
            }
        }
        Some(Search {
            m,
            optimize,
            adm,
            suffix_min_w,
            suffix_min_tp,
            relax,
            usage: vec![0; n_links],
            on_link: vec![Vec::new(); n_links],
            placed: vec![None; n],
            app_unit,
            budget: vec![f64::INFINITY; n],
            stamp: vec![0; n],
            stamp_now: 0,
            cur_usum: 0,
            cur_tp: 0,
            best: None,
            nodes: 0,
            done: false,
        })
    }

    fn choice(&self) -> Vec<IndexChoice> {
        self.placed
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let (o, _, path) = p.expect("complete assignment");
                let opt = &self.m.units[self.app_unit[a]].options[o];
                (opt.tp_idx, opt.d_idx, path)
            })
            .collect()
    }

    fn unit_step(&mut self, k: usize) {
        self.nodes += 1;
        let m = self.m;
        if k == m.units.len() {
            self.leaf();
            return;
        }
        let fwd = &self.suffix_min_w[k];
        if (0..m.caps.len()).any(|l| self.usage[l] + fwd[l] > m.caps[l]) {
            return;
        }
        if self.optimize && self.prune(k) {
            return;
        }
        for i in 0..self.adm[k].len() {
            let o = self.adm[k][i];
            let opt = &m.units[k].options[o];
            self.cur_usum += opt.usum;
            self.cur_tp += opt.tpsum;
            self.member_step(k, o, 0);
            let opt = &m.units[k].options[o];
            self.cur_usum -= opt.usum;
            self.cur_tp -= opt.tpsum;
            if self.done {
                return;
            }
        }
    }

    fn member_step(&mut self, k: usize, o: usize, mi: usize) {
        let m = self.m;
        let unit = &m.units[k];
        if mi == unit.members.len() {
            self.unit_step(k + 1);
            return;
        }
        let a = unit.members[mi];
        let opt = &unit.options[o];
        let w = opt.tp[mi];
        for &p in &opt.paths[mi] {
            let links = &m.path_links[a][p];
            let mut fits = true;
            for &l in links {
                self.usage[l] += w;
                fits &= self.usage[l] <= m.caps[l];
            }
            self.placed[a] = Some((o, mi, p));
            self.budget[a] = opt.d[mi];
            if fits && self.delays_ok(a, links) {
                for &l in links {
                    self.on_link[l].push(a);
                }
                self.member_step(k, o, mi + 1);
                for &l in links {
                    self.on_link[l].pop();
                }
            }
            self.placed[a] = None;
            for &l in links {
                self.usage[l] -= w;
            }
            if self.done {
                return;
            }
        }
    }

    /// Checks `a` and every placed application whose delay may have grown.
    fn delays_ok(&mut self, a: usize, links: &[usize]) -> bool {
        if self.m.ignore_delay {
            return true;
        }
        self.stamp_now += 1;
        if !self.delay_ok(a) {
            return false;
        }
        self.stamp[a] = self.stamp_now;
        for &l in links {
            if self.m.flat[l] {
                continue;
            }
            for i in 0..self.on_link[l].len() {
                let b = self.on_link[l][i];
                if self.stamp[b] != self.stamp_now {
                    self.stamp[b] = self.stamp_now;
                    if !self.delay_ok(b) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn delay_ok(&self, a: usize) -> bool {
        let (_, _, p) = self.placed[a].expect("placed");
        path_delay(&self.m.curves, &self.m.path_links[a][p], &self.usage) <= self.budget[a] + DELAY_TOLERANCE_MS
    }

    fn leaf(&mut self) {
        let choice = self.choice();
        if !self.optimize {
            self.best = Some(Incumbent {
                usum: self.cur_usum,
                tpsum: self.cur_tp,
                lex: lex_key(&self.m.rank, &choice),
                choice,
            });
            self.done = true;
            return;
        }
        let lex = lex_key(&self.m.rank, &choice);
        let better = match &self.best {
            None => true,
            Some(b) => compare_keys((self.cur_usum, self.cur_tp, &lex), (b.usum, b.tpsum, &b.lex)) == Ordering::Less,
        };
        if better {
            self.best = Some(Incumbent {
                usum: self.cur_usum,
                tpsum: self.cur_tp,
                choice,
                lex,
            });
        }
    }

    /// Bound test before branching on unit `k`.
    fn prune(&self, k: usize) -> bool {
        let Some(best) = &self.best else {
            return false;
        };
        let m = self.m;
        let residual: Vec<i64> = (0..m.caps.len()).map(|l| m.caps[l] - self.usage[l]).collect();
        let mut ub_units = 0i64;
        for (r, unit) in m.units.iter().enumerate().skip(k) {
            let fit = self.adm[r]
                .iter()
                .map(|&o| &unit.options[o])
                .filter(|o| o.forced.iter().all(|&(l, w)| w <= residual[l]))
                .map(|o| o.usum)
                .max();
            match fit {
                Some(v) => ub_units += v,
                None => return true,
            }
        }
        let mut ub = ub_units;
        for rx in &self.relax {
            let l = rx.link;
            let mut left = residual[l] - rx.min_w[k];
            if left < 0 {
                return true;
            }
            let mut whole = rx.base[k];
            let mut frac = 0.0;
            for &(dw, dv) in &rx.segs[k] {
                if dw <= left {
                    whole += dv;
                    left -= dw;
                } else {
                    frac = dv as f64 * left as f64 / dw as f64;
                    break;
                }
            }
            // one unit of slack absorbs rounding in the fractional piece
            ub = ub.min(whole + frac.ceil() as i64 + 1);
        }
        let ub = self.cur_usum + ub;
        let tp_lb = self.cur_tp + self.suffix_min_tp[k];
        (-ub, tp_lb) > (-best.usum, best.tpsum)
    }
}

/// Per-link multiple-choice knapsack relaxations for links that some unit is
/// forced through.
fn relaxations(m: &Model, adm: &[Vec<usize>]) -> Vec<LinkRelaxation> {
    let n_units = m.units.len();
    let mut out = Vec::new();
    for l in 0..m.caps.len() {
        let forced_somewhere = (0..n_units).any(|k| {
            adm[k]
                .iter()
                .any(|&o| m.units[k].options[o].forced.iter().any(|&(x, _)| x == l))
        });
        if !forced_somewhere {
            continue;
        }
        let mut base = vec![0i64; n_units + 1];
        let mut min_w = vec![0i64; n_units + 1];
        let mut segs: Vec<Vec<(i64, i64)>> = vec![Vec::new(); n_units + 1];
        for k in (0..n_units).rev() {
            let pts: Vec<(i64, i64)> = adm[k]
                .iter()
                .map(|&o| {
                    let opt = &m.units[k].options[o];
                    let w = opt.forced.iter().find(|&&(x, _)| x == l).map_or(0, |&(_, w)| w);
                    (w, opt.usum)
                })
                .collect();
            let (b, w0, hull) = upper_hull(pts);
            base[k] = base[k + 1] + b;
            min_w[k] = min_w[k + 1] + w0;
            let mut merged = segs[k + 1].clone();
            merged.extend(hull);
            merged.sort_by(|x, y| by_slope(*x, *y));
            segs[k] = merged;
        }
        out.push(LinkRelaxation {
            link: l,
            base,
            min_w,
            segs,
        });
    }
    out
}

/// Decreasing value per weight, exact.
fn by_slope((w1, v1): (i64, i64), (w2, v2): (i64, i64)) -> Ordering {
    ((v2 as i128) * (w1 as i128)).cmp(&((v1 as i128) * (w2 as i128)))
}

/// Lightest point (value, weight) and the increments along the upper concave
/// hull of `(weight, value)` points.
fn upper_hull(mut pts: Vec<(i64, i64)>) -> (i64, i64, Vec<(i64, i64)>) {
    pts.sort_by_key(|&(w, v)| (w, std::cmp::Reverse(v)));
    let mut chain: Vec<(i64, i64)> = Vec::new();
    for p in pts {
        if let Some(&last) = chain.last() {
            if p.1 <= last.1 {
                continue;
            }
        }
        while chain.len() >= 2 {
            let (a, b) = (chain[chain.len() - 2], chain[chain.len() - 1]);
            // drop b if it lies on or under segment a -> p
            let lhs = (b.1 - a.1) as i128 * (p.0 - a.0) as i128;
            let rhs = (p.1 - a.1) as i128 * (b.0 - a.0) as i128;
            if lhs <= rhs {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(p);
    }
    let (w0, v0) = chain[0];
    let incs = chain.windows(2).map(|s| (s[1].0 - s[0].0, s[1].1 - s[0].1)).collect();
    (v0, w0, incs)
}

/// Lowest key reachable by every application, or `None` if even that is
/// infeasible. Returns the witness of the best threshold.
fn max_min(m: &Model, nodes: &mut u64) -> Option<(i64, Vec<IndexChoice>)> {
    let levels = m.utility_levels();
    if m.units.is_empty() {
        return Some((0, Vec::new()));
    }
    let feasible = |tau: i64, nodes: &mut u64| -> Option<Vec<IndexChoice>> {
        let mut s = Search::new(m, tau, false)?;
        s.unit_step(0);
        *nodes += s.nodes;
        s.best.map(|b| b.choice)
    };
    let mut witness = feasible(*levels.first()?, nodes)?;
    let (mut lo, mut hi) = (0usize, levels.len());
    // invariant: levels[lo] feasible, levels[hi..] infeasible
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        match feasible(levels[mid], nodes) {
            Some(w) => {
                lo = mid;
                witness = w;
            }
            None => hi = mid,
        }
    }
    Some((levels[lo], witness))
}

fn witness_utility(problem: &AllocationProblem, choice: &[IndexChoice]) -> f64 {
    problem
        .apps
        .iter()
        .zip(choice)
        .map(|(a, &(t, d, _))| a.grid.values[t][d])
        .fold(f64::INFINITY, f64::min)
}

fn diagnose(problem: &AllocationProblem) -> AllocationError {
    let relaxed = Model::new(problem, true).map(|m| {
        let mut nodes = 0;
        max_min(&m, &mut nodes).is_some()
    });
    let m = match Model::new(problem, false) {
        Ok(m) => m,
        Err(e) => return e,
    };
    let class = if relaxed == Ok(true) {
        InfeasibilityClass::Delay
    } else {
        InfeasibilityClass::Capacity
    };
    let mut detail = Vec::new();
    for u in &m.units {
        if u.options.is_empty() {
            let ids: Vec<&str> = u.members.iter().map(|&a| problem.apps[a].id.as_str()).collect();
            detail.push(format!("no grid point of {} fits any candidate path", ids.join(", ")));
        }
    }
    if detail.is_empty() {
        detail.push(format!("no joint assignment satisfies the {class} constraints"));
    }
    AllocationError::Infeasible {
        class,
        detail: detail.join("; "),
    }
}

fn stage1(m: &Model, nodes: &mut u64) -> Result<(i64, Vec<IndexChoice>), AllocationError> {
    if m.units.iter().any(|u| u.options.is_empty()) {
        return Err(diagnose(m.problem));
    }
    max_min(m, nodes).ok_or_else(|| diagnose(m.problem))
}

/// Maximum over feasible assignments of the minimum utility, with a witness
/// attaining it.
pub fn solve_stage1(problem: &AllocationProblem) -> Result<(f64, Assignment), AllocationError> {
    let m = Model::new(problem, false)?;
    let mut nodes = 0;
    let (_, choice) = stage1(&m, &mut nodes)?;
    let uv = if choice.is_empty() {
        0.0
    } else {
        witness_utility(problem, &choice)
    };
    let r = build_result(
        problem,
        &m.paths,
        &choice,
        uv,
        SolverStats {
            nodes_explored: nodes,
            optimality: Optimality::Proven,
            wall_time: Default::default(),
        },
    );
    Ok((uv, r.assignment()))
}

fn stage2(
    m: &Model,
    uv_min1: i64,
    incumbent: Option<&[IndexChoice]>,
    nodes: &mut u64,
) -> Result<Vec<IndexChoice>, AllocationError> {
    let eps = utility_key(m.problem.epsilon);
    let Some(mut s) = Search::new(m, uv_min1 - eps, true) else {
        return Err(diagnose(m.problem));
    };
    if let Some(choice) = incumbent {
        let g = |a: usize| &m.problem.apps[a].grid;
        let mut usum = 0;
        let mut tpsum = 0;
        for (a, &(t, d, _)) in choice.iter().enumerate() {
            usum += utility_key(g(a).values[t][d]);
            tpsum += super::tp_milli(g(a).tp_levels[t]);
        }
        s.best = Some(Incumbent {
            usum,
            tpsum,
            lex: lex_key(&m.rank, choice),
            choice: choice.to_vec(),
        });
    }
    s.unit_step(0);
    *nodes += s.nodes;
    s.best.map(|b| b.choice).ok_or_else(|| diagnose(m.problem))
}

/// Maximizes the utility sum with every application at or above
/// `uv_min1 - epsilon`.
pub fn solve_stage2(problem: &AllocationProblem, uv_min1: f64) -> Result<AllocationResult, AllocationError> {
    let start = Instant::now();
    let m = Model::new(problem, false)?;
    let mut nodes = 0;
    let choice = if m.units.is_empty() {
        Vec::new()
    } else {
        stage2(&m, utility_key(uv_min1), None, &mut nodes)?
    };
    Ok(build_result(
        problem,
        &m.paths,
        &choice,
        uv_min1,
        SolverStats {
            nodes_explored: nodes,
            optimality: Optimality::Proven,
            wall_time: start.elapsed(),
        },
    ))
}

/// Both stages; the stage-1 witness seeds the stage-2 search.
pub fn solve(problem: &AllocationProblem) -> Result<AllocationResult, AllocationError> {
    let start = Instant::now();
    let m = Model::new(problem, false)?;
    let mut nodes = 0;
    let (tau, witness) = stage1(&m, &mut nodes)?;
    let (uv1, choice) = if m.units.is_empty() {
        (0.0, Vec::new())
    } else {
        let uv1 = witness_utility(problem, &witness);
        (uv1, stage2(&m, tau, Some(&witness), &mut nodes)?)
    };
    Ok(build_result(
        problem,
        &m.paths,
        &choice,
        uv1,
        SolverStats {
            nodes_explored: nodes,
            optimality: Optimality::Proven,
            wall_time: start.elapsed(),
        },
    ))
}
