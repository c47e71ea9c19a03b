//! Directed network model: nodes, capacitated links with load-dependent delay,
//! and loop-free candidate path enumeration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node identifier.
pub type NodeId = String;

/// Ordered node pair identifying a directed link.
pub type LinkKey = (NodeId, NodeId);

/// A loop-free node sequence from source to destination.
pub type Path = Vec<NodeId>;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("usage {usage} kbps outside delay curve domain [0, {max}]")]
    UsageOutOfRange { usage: f64, max: f64 },
    #[error("delay curve must have at least two points")]
    DegenerateCurve,
}

/// Piecewise-linear map from link usage (kbps) to link delay (ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCurve {
    pub usage_points: Vec<f64>,
    pub delay_points: Vec<f64>,
}

impl DelayCurve {
    pub fn new(usage_points: Vec<f64>, delay_points: Vec<f64>) -> Self {
        Self {
            usage_points,
            delay_points,
        }
    }

    /// Flat curve with a fixed delay up to `max_usage`.
    pub fn constant(delay_ms: f64, max_usage: f64) -> Self {
        Self::new(vec![0.0, max_usage], vec![delay_ms, delay_ms])
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Self {
        Self::new(
            pairs.iter().map(|p| p[0]).collect(),
            pairs.iter().map(|p| p[1]).collect(),
        )
    }

    pub fn pairs(&self) -> Vec<[f64; 2]> {
        self.usage_points
            .iter()
            .zip(&self.delay_points)
            .map(|(&u, &d)| [u, d])
            .collect()
    }

    pub fn max_usage(&self) -> f64 {
        self.usage_points.last().copied().unwrap_or(0.0)
    }

    /// Index `p` of the segment `[usage_points[p], usage_points[p+1])` holding
    /// `usage`. Segments are left-closed; the last knot maps onto the final
    /// segment.
    pub(crate) fn segment_of(&self, usage: f64) -> usize {
        let n = self.usage_points.len();
        // first knot strictly greater than usage
        let upper = self.usage_points.partition_point(|&u| u <= usage);
        upper.saturating_sub(1).min(n - 2)
    }

    /// Problems with the curve itself, independent of any link capacity.
    fn shape_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.usage_points.len() != self.delay_points.len() {
            out.push(format!(
                "usage_points ({}) and delay_points ({}) differ in length",
                self.usage_points.len(),
                self.delay_points.len()
            ));
            return out;
        }
        if self.usage_points.len() < 2 {
            out.push("delay curve needs at least two points".into());
            return out;
        }
        if self
            .usage_points
            .iter()
            .chain(&self.delay_points)
            .any(|v| !v.is_finite())
        {
            out.push("delay curve contains non-finite values".into());
        }
        if self.usage_points[0] != 0.0 {
            out.push(format!("first usage point must be 0, found {}", self.usage_points[0]));
        }
        if self.usage_points.windows(2).any(|w| w[1] <= w[0]) {
            out.push("usage points are not strictly ascending".into());
        }
        if self.delay_points.iter().any(|&d| d < 0.0) {
            out.push("delay points must be non-negative".into());
        }
        if self.delay_points.windows(2).any(|w| w[1] < w[0]) {
            out.push("delay points decrease with usage".into());
        }
        out
    }
}

/// Delay at `usage` by linear interpolation between the bracketing knots.
pub fn link_delay(curve: &DelayCurve, usage: f64) -> Result<f64, TopologyError> {
    if curve.usage_points.len() < 2 || curve.delay_points.len() != curve.usage_points.len() {
        return Err(TopologyError::DegenerateCurve);
    }
    let max = curve.max_usage();
    if !(0.0..=max).contains(&usage) {
        return Err(TopologyError::UsageOutOfRange { usage, max });
    }
    let p = curve.segment_of(usage);
    let (u0, u1) = (curve.usage_points[p], curve.usage_points[p + 1]);
    let (d0, d1) = (curve.delay_points[p], curve.delay_points[p + 1]);
    if usage == u0 {
        return Ok(d0);
    }
    if usage == u1 {
        return Ok(d1);
    }
    let scale = (usage - u0) / (u1 - u0);
    Ok(d0 + (d1 - d0) * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub capacity_kbps: f64,
    pub delay_curve: DelayCurve,
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// The offending link, if the problem is link-local.
    pub link: Option<LinkKey>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.link {
            Some((u, v)) => write!(f, "link {u}->{v}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: BTreeSet<NodeId>,
    #[serde(with = "link_list")]
    pub links: BTreeMap<LinkKey, Link>,
}

/// Links as a JSON-friendly list of `{from, to, ...}` records.
mod link_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        from: NodeId,
        to: NodeId,
        #[serde(flatten)]
        link: Link,
    }

    pub fn serialize<S: Serializer>(links: &BTreeMap<LinkKey, Link>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = links
            .iter()
            .map(|((from, to), link)| Entry {
                from: from.clone(),
                to: to.clone(),
                link: link.clone(),
            })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<LinkKey, Link>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.from, e.to), e.link)).collect())
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: impl Into<NodeId>) {
        self.nodes.insert(node.into());
    }

    /// Inserts a directed link, adding its endpoints as nodes.
    pub fn add_link(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>, link: Link) {
        let (from, to) = (from.into(), to.into());
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        self.links.insert((from, to), link);
    }

    pub fn link(&self, from: &str, to: &str) -> Option<&Link> {
        self.links.get(&(from.to_string(), to.to_string()))
    }

    /// Position of a link in the sorted link map; stable for the lifetime of
    /// the topology.
    pub fn link_index(&self, from: &str, to: &str) -> Option<usize> {
        self.links.keys().position(|(u, v)| u == from && v == to)
    }

    fn successors<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a NodeId> + 'a {
        // BTreeMap keys are sorted by (from, to), so successors come out in
        // lexicographic order.
        self.links
            .range((node.to_string(), String::new())..)
            .take_while(move |((u, _), _)| u == node)
            .map(|((_, v), _)| v)
    }

    /// Links traversed by `path`, in order. `None` if a hop has no link.
    pub fn path_links(&self, path: &[NodeId]) -> Option<Vec<LinkKey>> {
        path.windows(2)
            .map(|w| {
                let key = (w[0].clone(), w[1].clone());
                self.links.contains_key(&key).then_some(key)
            })
            .collect()
    }
}

/// Lists every invariant violation; an empty list means the topology is
/// well-formed.
pub fn validate(topology: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for ((u, v), link) in &topology.links {
        let key = Some((u.clone(), v.clone()));
        if u == v {
            out.push(Violation {
                link: key.clone(),
                message: "self-loop links are not allowed".into(),
            });
        }
        for n in [u, v] {
            if !topology.nodes.contains(n) {
                out.push(Violation {
                    link: key.clone(),
                    message: format!("endpoint {n} is not a declared node"),
                });
            }
        }
        if !(link.capacity_kbps > 0.0 && link.capacity_kbps.is_finite()) {
            out.push(Violation {
                link: key.clone(),
                message: format!("capacity must be positive, found {}", link.capacity_kbps),
            });
        }
        let shape = link.delay_curve.shape_violations();
        let c = &link.delay_curve;
        let usage_ok = c.usage_points.len() >= 2
            && c.usage_points.len() == c.delay_points.len()
            && c.usage_points.iter().all(|u| u.is_finite());
        out.extend(shape.into_iter().map(|message| Violation {
            link: key.clone(),
            message,
        }));
        if usage_ok && link.delay_curve.max_usage() < link.capacity_kbps {
            out.push(Violation {
                link: key,
                message: format!(
                    "delay curve ends at {} kbps, below capacity {}",
                    link.delay_curve.max_usage(),
                    link.capacity_kbps
                ),
            });
        }
    }
    out
}

/// Enumerates all loop-free paths from `src` to `dst`.
pub fn all_simple_paths(topology: &Topology, src: &str, dst: &str) -> Vec<Path> {
    let mut out = Vec::new();
    if src == dst || !topology.nodes.contains(src) || !topology.nodes.contains(dst) {
        return out;
    }
    let mut stack = vec![src.to_string()];
    let mut on_path: BTreeSet<String> = BTreeSet::from([src.to_string()]);
    dfs_paths(topology, dst, &mut stack, &mut on_path, &mut out);
    sort_paths(&mut out);
    out
}

fn dfs_paths(
    topology: &Topology,
    dst: &str,
    stack: &mut Vec<String>,
    on_path: &mut BTreeSet<String>,
    out: &mut Vec<Path>,
) {
    let last = stack.last().cloned().expect("non-empty path stack");
    let next: Vec<String> = topology.successors(&last).cloned().collect();
    for v in next {
        if v == dst {
            let mut p = stack.clone();
            p.push(v);
            out.push(p);
        } else if !on_path.contains(&v) {
            on_path.insert(v.clone());
            stack.push(v.clone());
            dfs_paths(topology, dst, stack, on_path, out);
            stack.pop();
            on_path.remove(&v);
        }
    }
}

fn sort_paths(paths: &mut [Path]) {
    paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
}

/// Up to `k` loop-free paths ordered by hop count, then by node sequence.
pub fn candidate_paths(topology: &Topology, src: &str, dst: &str, k: usize) -> Vec<Path> {
    let mut paths = all_simple_paths(topology, src, dst);
    paths.truncate(k);
    paths
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_link(cap: f64, delay: f64) -> Link {
        Link {
            capacity_kbps: cap,
            delay_curve: DelayCurve::constant(delay, cap),
        }
    }

    fn two_node() -> Topology {
        let mut t = Topology::new();
        t.add_link("u", "v", flat_link(100_000.0, 2.0));
        t
    }

    fn diamond() -> Topology {
        let mut t = Topology::new();
        for (a, b) in [("u", "b"), ("u", "a"), ("a", "v"), ("b", "v")] {
            t.add_link(a, b, flat_link(1000.0, 1.0));
        }
        t
    }

    #[test]
    fn single_bottleneck_is_valid() {
        assert!(validate(&two_node()).is_empty());
    }

    #[test]
    fn zero_capacity_is_reported_once() {
        let mut t = Topology::new();
        t.add_link(
            "u",
            "v",
            Link {
                capacity_kbps: 0.0,
                delay_curve: DelayCurve::constant(2.0, 100.0),
            },
        );
        let report = validate(&t);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].link, Some(("u".into(), "v".into())));
    }

    #[test]
    fn descending_usage_points_are_reported() {
        let mut t = Topology::new();
        t.add_link(
            "u",
            "v",
            Link {
                capacity_kbps: 50.0,
                delay_curve: DelayCurve::new(vec![0.0, 100.0, 60.0], vec![0.0, 1.0, 2.0]),
            },
        );
        let report = validate(&t);
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].message.contains("ascending"));
    }

    #[test]
    fn other_curve_defects() {
        let mut t = Topology::new();
        t.add_link(
            "u",
            "v",
            Link {
                capacity_kbps: 200.0,
                delay_curve: DelayCurve::new(vec![0.0, 100.0], vec![5.0, 1.0]),
            },
        );
        t.add_link("v", "v", flat_link(10.0, 1.0));
        let report = validate(&t);
        let text: Vec<String> = report.iter().map(|v| v.to_string()).collect();
        assert!(text.iter().any(|m| m.contains("decrease")), "{text:?}");
        assert!(text.iter().any(|m| m.contains("below capacity")), "{text:?}");
        assert!(text.iter().any(|m| m.contains("self-loop")), "{text:?}");
    }

    #[test]
    fn delay_examples() {
        let flat = DelayCurve::constant(2.0, 100_000.0);
        assert_eq!(link_delay(&flat, 57_300.0).unwrap(), 2.0);
        let ramp = DelayCurve::new(vec![0.0, 100.0], vec![0.0, 10.0]);
        assert_eq!(link_delay(&ramp, 100.0).unwrap(), 10.0);
        assert_eq!(link_delay(&ramp, 50.0).unwrap(), 5.0);
    }

    #[test]
    fn delay_out_of_range() {
        let ramp = DelayCurve::new(vec![0.0, 100.0], vec![0.0, 10.0]);
        assert!(matches!(
            link_delay(&ramp, 100.5),
            Err(TopologyError::UsageOutOfRange { .. })
        ));
        assert!(link_delay(&ramp, -1.0).is_err());
    }

    #[test]
    fn knots_are_exact() {
        let c = DelayCurve::new(vec![0.0, 30.0, 70.0, 100.0], vec![1.0, 1.3, 7.7, 40.1]);
        for (u, d) in c.usage_points.iter().zip(&c.delay_points) {
            assert_eq!(link_delay(&c, *u).unwrap(), *d);
        }
    }

    #[test]
    fn single_link_single_path() {
        let t = two_node();
        assert_eq!(candidate_paths(&t, "u", "v", 4), vec![vec!["u", "v"]]);
    }

    #[test]
    fn diamond_prefers_a_branch() {
        let t = diamond();
        let paths = candidate_paths(&t, "u", "v", 2);
        assert_eq!(paths, vec![vec!["u", "a", "v"], vec!["u", "b", "v"]]);
        assert_eq!(candidate_paths(&t, "u", "v", 1).len(), 1);
    }

    #[test]
    fn disconnected_pair_has_no_paths() {
        let mut t = two_node();
        t.add_node("w");
        assert!(candidate_paths(&t, "u", "w", 4).is_empty());
        assert!(candidate_paths(&t, "v", "u", 4).is_empty());
    }

    #[test]
    fn shorter_paths_come_first() {
        let mut t = diamond();
        t.add_link("u", "v", flat_link(10.0, 1.0));
        let paths = candidate_paths(&t, "u", "v", 4);
        assert_eq!(paths[0], vec!["u", "v"]);
        assert_eq!(paths.len(), 3);
        assert_eq!(candidate_paths(&t, "u", "v", 4), paths);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn curve() -> impl Strategy<Value = DelayCurve> {
            (2usize..7)
                .prop_flat_map(|n| {
                    (
                        prop::collection::vec(1.0f64..500.0, n - 1),
                        0.0f64..50.0,
                        prop::collection::vec(0.0f64..30.0, n - 1),
                    )
                })
                .prop_map(|(gaps, d0, rises)| {
                    let mut u = vec![0.0];
                    let mut d = vec![d0];
                    for (g, r) in gaps.iter().zip(&rises) {
                        u.push(u.last().unwrap() + g);
                        d.push(d.last().unwrap() + r);
                    }
                    DelayCurve::new(u, d)
                })
        }

        proptest! {
            #[test]
            fn delay_is_monotone_and_continuous(c in curve()) {
                let max = c.max_usage();
                let steps = 2000;
                let mut prev = link_delay(&c, 0.0).unwrap();
                let max_slope = c
                    .usage_points
                    .windows(2)
                    .zip(c.delay_points.windows(2))
                    .map(|(u, d)| (d[1] - d[0]) / (u[1] - u[0]))
                    .fold(0.0, f64::max);
                for i in 1..=steps {
                    let u = (max * i as f64 / steps as f64).min(max);
                    let d = link_delay(&c, u).unwrap();
                    prop_assert!(d + 1e-9 >= prev);
                    prop_assert!(d - prev <= max_slope * max / steps as f64 + 1e-9);
                    prev = d;
                }
                for (u, d) in c.usage_points.iter().zip(&c.delay_points) {
                    prop_assert_eq!(link_delay(&c, *u).unwrap(), *d);
                }
            }
        }
    }
}
