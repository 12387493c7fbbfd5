//! Directed network topologies stored as in-neighbor lists.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Plain,
    Excitatory,
    Inhibitory,
}

/// One incoming edge of a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InEdge {
    pub source: u32,
    pub weight: f64,
    pub kind: NodeKind,
}

/// How in-neighborhoods are drawn for unsigned (SIS) networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeModel {
    /// Every node has exactly `D` in-neighbors.
    #[default]
    Fixed,
    /// Every ordered pair is an edge independently with probability `D / (n - 1)`.
    Bernoulli,
}

/// Directed graph in compressed in-neighbor form.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    offsets: Vec<usize>,
    edges: Vec<InEdge>,
    node_kind: Vec<NodeKind>,
}

impl NetworkTopology {
    fn from_lists(lists: Vec<Vec<InEdge>>, node_kind: Vec<NodeKind>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut edges = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for list in lists {
            edges.extend(list);
            offsets.push(edges.len());
        }
        NetworkTopology {
            offsets,
            edges,
            node_kind,
        }
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize, kind: NodeKind) -> Self {
        NetworkTopology::from_lists(vec![Vec::new(); n], vec![kind; n])
    }

    pub fn n(&self) -> usize {
        self.node_kind.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn in_neighbors(&self, i: usize) -> &[InEdge] {
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn node_kind(&self, i: usize) -> NodeKind {
        self.node_kind[i]
    }

    pub fn node_kinds(&self) -> &[NodeKind] {
        &self.node_kind
    }

    /// `(source, target)` pairs in target-major order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.n())
            .flat_map(|i| self.in_neighbors(i).iter().map(move |e| (e.source as usize, i)))
            .collect()
    }

    /// Checks index ranges, self-loops and duplicate in-neighbors.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut seen = vec![usize::MAX; n];
        for i in 0..n {
            for e in self.in_neighbors(i) {
                let s = e.source as usize;
                if s >= n {
                    return Err(Error::Bounds(format!("edge {s} -> {i} with n = {n}")));
                }
                if s == i {
                    return Err(Error::InvalidConfig(format!("self-loop at node {i}")));
                }
                if seen[s] == i {
                    return Err(Error::InvalidConfig(format!("duplicate edge {s} -> {i}")));
                }
                seen[s] = i;
            }
        }
        Ok(())
    }

    /// Parses a whitespace-separated `source target [weight]` edge list.
    /// Lines starting with `#` are ignored. Nodes are `0..n`.
    pub fn from_edge_list(text: &str, n: usize) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_idx = |p: Option<&str>| -> Result<usize> {
                p.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("edge list line {}: `{line}`", lineno + 1)))
            };
            let s = parse_idx(parts.next())?;
            let t = parse_idx(parts.next())?;
            let weight = match parts.next() {
                Some(w) => w
                    .parse()
                    .map_err(|_| Error::Parse(format!("edge list line {}: bad weight", lineno + 1)))?,
                None => 1.0,
            };
            if s >= n || t >= n {
                return Err(Error::Bounds(format!("edge {s} -> {t} with n = {n}")));
            }
            lists[t].push(InEdge {
                source: s as u32,
                weight,
                kind: NodeKind::Plain,
            });
        }
        let topo = NetworkTopology::from_lists(lists, vec![NodeKind::Plain; n]);
        topo.validate()?;
        Ok(topo)
    }
}

/// Draws `count` distinct nodes from `pool`, skipping `exclude`.
fn sample_from_pool(
    pool: std::ops::Range<usize>,
    exclude: usize,
    count: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let skip = pool.contains(&exclude);
    let size = pool.len() - usize::from(skip);
    debug_assert!(count <= size);
    let mut picked: Vec<usize> = index::sample(rng, size, count)
        .into_iter()
        .map(|j| {
            let v = pool.start + j;
            if skip && v >= exclude {
                v + 1
            } else {
                v
            }
        })
        .collect();
    picked.sort_unstable();
    picked
}

/// Every node gets exactly `d` distinct in-neighbors, uniformly among the
/// other `n - 1` nodes. Edges are plain with weight 1.
pub fn gen_topology_fixed_indegree(n: usize, d: usize, rng: &mut RngStream) -> Result<NetworkTopology> {
    if d == 0 || d >= n {
        return Err(Error::InvalidConfig(format!(
            "fixed in-degree needs 0 < D < n, got D = {d}, n = {n}"
        )));
    }
    let lists = (0..n)
        .map(|i| {
            sample_from_pool(0..n, i, d, rng)
                .into_iter()
                .map(|s| InEdge {
                    source: s as u32,
                    weight: 1.0,
                    kind: NodeKind::Plain,
                })
                .collect()
        })
        .collect();
    Ok(NetworkTopology::from_lists(lists, vec![NodeKind::Plain; n]))
}

/// Erdős–Rényi digraph with expected in-degree `mean_degree`.
pub fn gen_topology_bernoulli(n: usize, mean_degree: f64, rng: &mut RngStream) -> Result<NetworkTopology> {
    if n < 2 || !(mean_degree > 0.0 && mean_degree <= (n - 1) as f64) {
        return Err(Error::InvalidConfig(format!(
            "Bernoulli graph needs n >= 2 and 0 < D <= n - 1, got D = {mean_degree}, n = {n}"
        )));
    }
    let p = mean_degree / (n - 1) as f64;
    let log_q = (1.0 - p).ln();
    let lists = (0..n)
        .map(|i| {
            let mut list = Vec::new();
            // geometric skipping over the n - 1 candidate sources
            let mut j: i64 = -1;
            loop {
                let skip = if p >= 1.0 {
                    0
                } else {
                    (rng.uniform_open().ln() / log_q).floor() as i64
                };
                j += 1 + skip;
                if j >= (n - 1) as i64 {
                    break;
                }
                let s = if (j as usize) >= i { j as usize + 1 } else { j as usize };
                list.push(InEdge {
                    source: s as u32,
                    weight: 1.0,
                    kind: NodeKind::Plain,
                });
            }
            list
        })
        .collect();
    Ok(NetworkTopology::from_lists(lists, vec![NodeKind::Plain; n]))
}

/// Excitatory/inhibitory network: the first `floor(e_fraction * n)` nodes are
/// excitatory. Each node draws `round(d * e_fraction)` excitatory and the rest
/// inhibitory in-neighbors; if its own type pool is one short because the node
/// itself is excluded, the shortfall is taken from the other pool. Weights are
/// Uniform(0, 1).
pub fn gen_topology_ei(n: usize, d: usize, e_fraction: f64, rng: &mut RngStream) -> Result<NetworkTopology> {
    if d == 0 || d >= n {
        return Err(Error::InvalidConfig(format!(
            "E/I network needs 0 < D < n, got D = {d}, n = {n}"
        )));
    }
    if !(e_fraction > 0.0 && e_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "excitatory fraction must lie in (0, 1), got {e_fraction}"
        )));
    }
    let n_exc = (e_fraction * n as f64).floor() as usize;
    let d_exc = (d as f64 * e_fraction).round() as usize;
    let d_inh = d - d_exc;
    let n_inh = n - n_exc;
    if n_exc < d_exc || n_inh < d_inh {
        return Err(Error::InvalidConfig(format!(
            "need {d_exc} excitatory and {d_inh} inhibitory in-neighbors but have {n_exc} and {n_inh} nodes"
        )));
    }
    let kinds: Vec<NodeKind> = (0..n)
        .map(|i| {
            if i < n_exc {
                NodeKind::Excitatory
            } else {
                NodeKind::Inhibitory
            }
        })
        .collect();
    let mut lists = Vec::with_capacity(n);
    for i in 0..n {
        let avail_exc = n_exc - usize::from(i < n_exc);
        let avail_inh = n_inh - usize::from(i >= n_exc);
        let mut want_exc = d_exc;
        let mut want_inh = d_inh;
        if want_exc > avail_exc {
            want_inh += want_exc - avail_exc;
            want_exc = avail_exc;
        }
        if want_inh > avail_inh {
            want_exc += want_inh - avail_inh;
            want_inh = avail_inh;
        }
        let mut list: Vec<InEdge> = Vec::with_capacity(d);
        for (pool, want, kind) in [
            (0..n_exc, want_exc, NodeKind::Excitatory),
            (n_exc..n, want_inh, NodeKind::Inhibitory),
        ] {
            for s in sample_from_pool(pool, i, want, rng) {
                list.push(InEdge {
                    source: s as u32,
                    weight: 0.0,
                    kind,
                });
            }
        }
        for e in &mut list {
            e.weight = rng.uniform_open();
        }
        lists.push(list);
    }
    Ok(NetworkTopology::from_lists(lists, kinds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    #[test]
    fn fixed_indegree_small() {
        let mut rng = derive_stream(1, &[]);
        let g = gen_topology_fixed_indegree(5, 2, &mut rng).unwrap();
        g.validate().unwrap();
        for i in 0..5 {
            assert_eq!(g.in_neighbors(i).len(), 2);
            assert!(g.in_neighbors(i).iter().all(|e| e.source as usize != i));
        }
    }

    #[test]
    fn two_nodes_forced() {
        let mut rng = derive_stream(3, &[]);
        let g = gen_topology_fixed_indegree(2, 1, &mut rng).unwrap();
        assert_eq!(g.in_neighbors(0)[0].source, 1);
        assert_eq!(g.in_neighbors(1)[0].source, 0);
    }

    #[test]
    fn fixed_indegree_reproducible() {
        let a = gen_topology_fixed_indegree(1000, 10, &mut derive_stream(5, &[1])).unwrap();
        let b = gen_topology_fixed_indegree(1000, 10, &mut derive_stream(5, &[1])).unwrap();
        assert_eq!(a.edge_list(), b.edge_list());
    }

    #[test]
    fn degree_too_large_is_rejected() {
        let mut rng = derive_stream(1, &[]);
        assert!(matches!(
            gen_topology_fixed_indegree(5, 5, &mut rng),
            Err(Error::InvalidConfig(_))
        ));
        assert!(gen_topology_ei(5, 5, 0.8, &mut rng).is_err());
    }

    #[test]
    fn ei_counts_at_paper_scale() {
        let g = gen_topology_ei(1000, 10, 0.8, &mut derive_stream(2, &[])).unwrap();
        g.validate().unwrap();
        let exc = g.node_kinds().iter().filter(|k| **k == NodeKind::Excitatory).count();
        assert_eq!(exc, 800);
        for i in 0..1000 {
            let nb = g.in_neighbors(i);
            assert_eq!(nb.len(), 10);
            let e = nb.iter().filter(|e| e.kind == NodeKind::Excitatory).count();
            assert_eq!(e, 8, "node {i}");
            for edge in nb {
                assert!(edge.weight > 0.0 && edge.weight < 1.0);
                assert_eq!(edge.kind, g.node_kind(edge.source as usize));
            }
        }
    }

    #[test]
    fn ei_tiny_network_is_complete() {
        let g = gen_topology_ei(5, 4, 0.8, &mut derive_stream(2, &[])).unwrap();
        let exc = g.node_kinds().iter().filter(|k| **k == NodeKind::Excitatory).count();
        assert_eq!(exc, 4);
        for i in 0..5 {
            let mut src: Vec<usize> = g.in_neighbors(i).iter().map(|e| e.source as usize).collect();
            src.sort();
            let others: Vec<usize> = (0..5).filter(|&j| j != i).collect();
            assert_eq!(src, others);
        }
    }

    #[test]
    fn ei_missing_type_is_rejected() {
        // one excitatory node, but round(9 * 0.19) = 2 excitatory inputs wanted
        let r = gen_topology_ei(10, 9, 0.19, &mut derive_stream(2, &[]));
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
        assert!(gen_topology_ei(4, 3, 0.5, &mut derive_stream(2, &[])).is_ok());
    }

    #[test]
    fn bernoulli_mean_degree() {
        let g = gen_topology_bernoulli(2000, 10.0, &mut derive_stream(8, &[])).unwrap();
        g.validate().unwrap();
        let mean = g.edge_count() as f64 / 2000.0;
        // Var(in-degree) ~ 10, so the mean over 2000 nodes has sd ~ 0.07
        assert!((mean - 10.0).abs() < 0.3, "mean in-degree {mean}");
    }

    #[test]
    fn edge_list_import() {
        let g = NetworkTopology::from_edge_list("# test\n0 1\n2 1 0.5\n1 0\n", 3).unwrap();
        assert_eq!(g.in_neighbors(1).len(), 2);
        assert_eq!(g.in_neighbors(1)[1].weight, 0.5);
        assert!(NetworkTopology::from_edge_list("0 0\n", 2).is_err());
        assert!(NetworkTopology::from_edge_list("0 1\n0 1\n", 2).is_err());
        assert!(NetworkTopology::from_edge_list("0 5\n", 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fixed_indegree_invariants(n in 2usize..200, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let d = 1 + ((n - 2) as f64 * frac) as usize;
            let g = gen_topology_fixed_indegree(n, d, &mut derive_stream(seed, &[])).unwrap();
            prop_assert!(g.validate().is_ok());
            for i in 0..n {
                prop_assert_eq!(g.in_neighbors(i).len(), d);
            }
        }

        #[test]
        fn ei_invariants(n in 10usize..200, seed in any::<u64>()) {
            let g = gen_topology_ei(n, 5, 0.8, &mut derive_stream(seed, &[])).unwrap();
            prop_assert!(g.validate().is_ok());
            for i in 0..n {
                prop_assert_eq!(g.in_neighbors(i).len(), 5);
            }
        }
    }
}
