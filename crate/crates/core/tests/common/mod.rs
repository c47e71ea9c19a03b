//! Random small allocation instances for property and acceptance tests.
#![allow(dead_code)]

use pacealloc_core::allocation::{AllocationProblem, ApplicationFlow};
use pacealloc_core::topology::{DelayCurve, Link, Topology};
use pacealloc_core::utility::UtilityGrid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Instance with at most 5 apps, 4 grid points per app, 4 nodes and 2
/// candidate paths per app.
pub fn random_instance(seed: u64) -> AllocationProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.gen_range(2..=4);
    let nodes: Vec<String> = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let mut t = Topology::new();
    for n in &nodes {
        t.add_node(n.clone());
    }
    let add = |t: &mut Topology, rng: &mut ChaCha8Rng, u: &str, v: &str| {
        let cap = rng.gen_range(5..=40) as f64 * 10.0;
        let knots = rng.gen_range(2..=4);
        let mut usage: Vec<f64> = (1..knots - 1)
            .map(|_| (rng.gen_range(1..20) as f64 / 20.0 * cap).round())
            .collect();
        usage.push(0.0);
        usage.push(cap);
        usage.sort_by(|a, b| a.partial_cmp(b).unwrap());
        usage.dedup();
        let mut d = rng.gen_range(0..5) as f64;
        let flat = rng.gen_bool(0.3);
        let delays = usage
            .iter()
            .map(|_| {
                let v = d;
                if !flat {
                    d += rng.gen_range(0..15) as f64;
                }
                v
            })
            .collect();
        t.add_link(
            u,
            v,
            Link {
                capacity_kbps: cap,
                delay_curve: DelayCurve::new(usage, delays),
            },
        );
    };
    for w in nodes.windows(2) {
        add(&mut t, &mut rng, &w[0], &w[1]);
    }
    for u in &nodes {
        for v in &nodes {
            if u != v && t.link(u, v).is_none() && rng.gen_bool(0.3) {
                add(&mut t, &mut rng, u, v);
            }
        }
    }
    let types = ["x", "y", "z"];
    let dims: Vec<(usize, usize)> = types
        .iter()
        .map(|_| {
            *[(1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (4, 1), (1, 3)]
                .choose(&mut rng)
                .unwrap()
        })
        .collect();
    let n_apps = rng.gen_range(1..=5);
    let apps = (0..n_apps)
        .map(|i| {
            let ty = rng.gen_range(0..types.len());
            let (nt, nd) = dims[ty];
            let mut tp: Vec<f64> = Vec::new();
            let mut x = 0.0;
            for _ in 0..nt {
                x += rng.gen_range(1..=8) as f64 * 10.0;
                tp.push(x);
            }
            let mut dl: Vec<f64> = Vec::new();
            let mut y = rng.gen_range(0..6) as f64;
            for _ in 0..nd {
                dl.push(y);
                y += rng.gen_range(3..=30) as f64;
            }
            // quarter steps make ties common
            let values = (0..nt)
                .map(|_| (0..nd).map(|_| 1.0 + rng.gen_range(0..=16) as f64 * 0.25).collect())
                .collect();
            let mut grid = UtilityGrid {
                tp_levels: tp,
                d_levels: dl,
                values,
            };
            grid.repair_monotone();
            let src = rng.gen_range(0..n_nodes);
            let mut dst = rng.gen_range(0..n_nodes - 1);
            if dst >= src {
                dst += 1;
            }
            ApplicationFlow {
                id: format!("app{}", (i * 7 + 3) % 10),
                app_type: types[ty].into(),
                src: nodes[src].clone(),
                dst: nodes[dst].clone(),
                grid,
            }
        })
        .collect();
    let mut p = AllocationProblem::new(t, apps);
    p.k_paths = 2;
    p.epsilon = *[0.0, 0.25, 0.3, 1.0].choose(&mut rng).unwrap();
    p.per_type_equal = rng.gen_bool(0.3);
    p
}
