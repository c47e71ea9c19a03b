//! Fast greedy allocation: a binary search over the minimum utility with a
//! greedy placement test, then greedy utility-sum upgrades.

use std::time::Instant;

use super::model::Model;
use super::{
    build_result, path_delay, utility_key, AllocationError, AllocationProblem, AllocationResult, IndexChoice,
    InfeasibilityClass, Optimality, SolverStats, DELAY_TOLERANCE_MS,
};

/// Option, path and link usage rows saved before a tentative placement.
type Snapshot = (Vec<Option<usize>>, Vec<Option<(usize, usize, usize)>>, Vec<i64>);

struct State<'m, 'a> {
    m: &'m Model<'a>,
    /// Chosen option per unit.
    opt: Vec<Option<usize>>,
    /// (unit, member position, path) per app.
    path: Vec<Option<(usize, usize, usize)>>,
    usage: Vec<i64>,
    checks: u64,
}

impl<'m, 'a> State<'m, 'a> {
    fn new(m: &'m Model<'a>) -> Self {
        Self {
            m,
            opt: vec![None; m.units.len()],
            path: vec![None; m.n_apps()],
            usage: vec![0; m.caps.len()],
            checks: 0,
        }
    }

    fn load(&mut self, a: usize, sign: i64) {
        let (k, mi, p) = self.path[a].expect("placed");
        let w = self.m.units[k].options[self.opt[k].unwrap()].tp[mi];
        for &l in &self.m.path_links[a][p] {
            self.usage[l] += sign * w;
        }
    }

    fn feasible(&mut self) -> bool {
        self.checks += 1;
        let m = self.m;
        if self.usage.iter().zip(&m.caps).any(|(u, c)| u > c) {
            return false;
        }
        if m.ignore_delay {
            return true;
        }
        self.path.iter().enumerate().all(|(a, slot)| match *slot {
            None => true,
            Some((k, mi, p)) => {
                let budget = m.units[k].options[self.opt[k].unwrap()].d[mi];
                path_delay(&m.curves, &m.path_links[a][p], &self.usage) <= budget + DELAY_TOLERANCE_MS
            }
        })
    }

    /// Places unit `k` with option `o`, each member on its first candidate
    /// path that keeps everything feasible.
    fn place(&mut self, k: usize, o: usize) -> bool {
        self.opt[k] = Some(o);
        let members = self.m.units[k].members.clone();
        for (mi, &a) in members.iter().enumerate() {
            let mut ok = false;
            for &p in &self.m.units[k].options[o].paths[mi] {
                self.path[a] = Some((k, mi, p));
                self.load(a, 1);
                if self.feasible() {
                    ok = true;
                    break;
                }
                self.load(a, -1);
                self.path[a] = None;
            }
            if !ok {
                self.remove(k);
                return false;
            }
        }
        true
    }

    fn remove(&mut self, k: usize) {
        for &a in &self.m.units[k].members {
            if self.path[a].is_some() {
                self.load(a, -1);
                self.path[a] = None;
            }
        }
        self.opt[k] = None;
    }

    fn snapshot(&self) -> Snapshot {
        (self.opt.clone(), self.path.clone(), self.usage.clone())
    }

    fn restore(&mut self, snap: &Snapshot) {
        self.opt.clone_from(&snap.0);
        self.path.clone_from(&snap.1);
        self.usage.clone_from(&snap.2);
    }

    fn choice(&self) -> Vec<IndexChoice> {
        self.path
            .iter()
            .map(|slot| {
                let (k, _, p) = slot.expect("complete");
                let o = &self.m.units[k].options[self.opt[k].unwrap()];
                (o.tp_idx, o.d_idx, p)
            })
            .collect()
    }
}

/// Greedy placement with every application at or above `tau`.
fn greedy<'m, 'a>(m: &'m Model<'a>, tau: i64, checks: &mut u64) -> Option<State<'m, 'a>> {
    let mut s = State::new(m);
    for (k, unit) in m.units.iter().enumerate() {
        let mut order: Vec<usize> = (0..unit.options.len())
            .filter(|&o| unit.options[o].min_u >= tau)
            .collect();
        order.sort_by_key(|&o| {
            let x = &unit.options[o];
            (x.tpsum, std::cmp::Reverse(x.d_idx))
        });
        if !order.into_iter().any(|o| s.place(k, o)) {
            *checks += s.checks;
            return None;
        }
    }
    *checks += s.checks;
    Some(s)
}

fn improve(s: &mut State, floor: i64) {
    let m = s.m;
    loop {
        let mut best: Option<(f64, i64, usize, usize)> = None;
        for (k, unit) in m.units.iter().enumerate() {
            let cur = s.opt[k].unwrap();
            let cur_opt = &unit.options[cur];
            for (o, opt) in unit.options.iter().enumerate() {
                if opt.min_u < floor || opt.usum <= cur_opt.usum {
                    continue;
                }
                let du = opt.usum - cur_opt.usum;
                let dtp = opt.tpsum - cur_opt.tpsum;
                let score = if dtp <= 0 {
                    f64::INFINITY
                } else {
                    du as f64 / dtp as f64
                };
                if let Some((bs, bdu, _, _)) = best {
                    if (score, du) <= (bs, bdu) {
                        continue;
                    }
                }
                let snap = s.snapshot();
                s.remove(k);
                let ok = s.place(k, o);
                s.restore(&snap);
                if ok {
                    best = Some((score, du, k, o));
                }
            }
        }
        let Some((_, _, k, o)) = best else {
            return;
        };
        s.remove(k);
        let applied = s.place(k, o);
        debug_assert!(applied);
    }
}

/// Feasible but not necessarily optimal allocation.
pub fn solve_heuristic(problem: &AllocationProblem) -> Result<AllocationResult, AllocationError> {
    let start = Instant::now();
    let m = Model::new(problem, false)?;
    let mut checks = 0;
    let levels = m.utility_levels();
    let fail = || {
        let relaxed = Model::new(problem, true)
            .ok()
            .and_then(|r| greedy(&r, i64::MIN, &mut 0).map(|_| ()))
            .is_some();
        let class = if relaxed {
            InfeasibilityClass::Delay
        } else {
            InfeasibilityClass::Capacity
        };
        AllocationError::Infeasible {
            class,
            detail: "greedy placement found no feasible assignment".into(),
        }
    };
    if m.units.is_empty() {
        return Ok(build_result(problem, &m.paths, &[], 0.0, stats(0, start)));
    }
    let Some(mut state) = greedy(&m, i64::MIN, &mut checks) else {
        return Err(fail());
    };
    let (mut lo, mut hi) = (0usize, levels.len());
    // levels[lo] is the best threshold known to pass
    let mut tau = i64::MIN;
    if let Some(s) = greedy(&m, levels[0], &mut checks) {
        state = s;
        tau = levels[0];
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            match greedy(&m, levels[mid], &mut checks) {
                Some(s) => {
                    lo = mid;
                    state = s;
                    tau = levels[mid];
                }
                None => hi = mid,
            }
        }
    }
    let choice = state.choice();
    let uv1 = problem
        .apps
        .iter()
        .zip(&choice)
        .map(|(a, &(t, d, _))| a.grid.values[t][d])
        .fold(f64::INFINITY, f64::min);
    let floor = tau.max(utility_key(uv1)) - utility_key(problem.epsilon);
    improve(&mut state, floor);
    checks += state.checks;
    let choice = state.choice();
    Ok(build_result(problem, &m.paths, &choice, uv1, stats(checks, start)))
}

fn stats(checks: u64, start: Instant) -> SolverStats {
    SolverStats {
        nodes_explored: checks,
        optimality: Optimality::Unknown,
        wall_time: start.elapsed(),
    }
}
