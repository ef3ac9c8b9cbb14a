//! Per-bin user interaction graphs and seeded modularity clustering.
//!
//! Replies, mentions, and retweets within one time bin aggregate into a
//! weighted digraph over users. Clustering maximizes Newman modularity on the
//! symmetrized graph with a Louvain variant that pins pre-specified seed
//! communities together as indivisible super-nodes.

mod louvain;

pub use louvain::{seeded_louvain, LouvainResult};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::TimeBin;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("partition does not cover node {0}")]
    UncoveredNode(String),
    #[error("seed sets overlap on user {0}")]
    OverlappingSeeds(String),
}

/// One user-to-user interaction event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub src: String,
    pub dst: String,
    pub kind: InteractionKind,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Reply,
    Mention,
    Retweet,
}

/// Weighted digraph over users within one bin. Nodes are ordered by user id;
/// parallel interactions collapse into edge weights; self-loops are dropped.
#[derive(Debug, Clone)]
pub struct UserGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    /// Out-adjacency, each list sorted by target index.
    out: Vec<Vec<(usize, f64)>>,
    in_degree: Vec<f64>,
}

impl UserGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, user: &str) -> Option<usize> {
        self.index.get(user).copied()
    }

    pub fn in_degree(&self, node: usize) -> f64 {
        self.in_degree[node]
    }

    pub fn in_degree_of(&self, user: &str) -> Option<f64> {
        self.node_index(user).map(|i| self.in_degree[i])
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, f64)] {
        &self.out[node]
    }

    /// Undirected adjacency with weights `w(u→v) + w(v→u)`; no self-loops.
    pub fn symmetric_adjacency(&self) -> Vec<HashMap<usize, f64>> {
        let mut adj: Vec<HashMap<usize, f64>> = vec![HashMap::new(); self.nodes.len()];
        for (u, edges) in self.out.iter().enumerate() {
            for &(v, w) in edges {
                *adj[u].entry(v).or_insert(0.0) += w;
                *adj[v].entry(u).or_insert(0.0) += w;
            }
        }
        adj
    }
}

/// Aggregate all in-bin interactions of all kinds into a [`UserGraph`].
pub fn build_graph(records: &[InteractionRecord], bin: &TimeBin) -> UserGraph {
    let mut weights: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in records {
        if !bin.contains(r.timestamp) || r.src == r.dst {
            continue;
        }
        *weights.entry((&r.src, &r.dst)).or_insert(0.0) += 1.0;
    }
    let mut nodes: Vec<String> = weights
        .keys()
        .flat_map(|(s, d)| [s.to_string(), d.to_string()])
        .collect();
    nodes.sort();
    nodes.dedup();
    let index: HashMap<String, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let mut out = vec![Vec::new(); nodes.len()];
    let mut in_degree = vec![0.0; nodes.len()];
    for ((src, dst), w) in weights {
        let (u, v) = (index[src], index[dst]);
        out[u].push((v, w));
        in_degree[v] += w;
    }
    UserGraph { nodes, index, out, in_degree }
}

/// A user partition: every node maps to a community id.
pub type Partition = BTreeMap<String, u32>;

/// Newman modularity `Q = Σ_c (e_c/m − (d_c/2m)²)` on the symmetrized graph.
pub fn modularity(graph: &UserGraph, partition: &Partition) -> Result<f64, GraphError> {
    if graph.node_count() == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let comm: Vec<u32> = graph
        .nodes()
        .iter()
        .map(|n| {
            partition
                .get(n)
                .copied()
                .ok_or_else(|| GraphError::UncoveredNode(n.clone()))
        })
        .collect::<Result<_, _>>()?;
    let adj = graph.symmetric_adjacency();
    let mut m = 0.0;
    let mut intra: HashMap<u32, f64> = HashMap::new();
    let mut degree: HashMap<u32, f64> = HashMap::new();
    for (u, nbrs) in adj.iter().enumerate() {
        for (&v, &w) in nbrs {
            if u < v {
                m += w;
                if comm[u] == comm[v] {
                    *intra.entry(comm[u]).or_insert(0.0) += w;
                }
            }
            if u != v {
                *degree.entry(comm[u]).or_insert(0.0) += w;
            }
        }
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    let mut q = 0.0;
    for (&c, &d) in &degree {
        let e = intra.get(&c).copied().unwrap_or(0.0);
        q += e / m - (d / (2.0 * m)).powi(2);
    }
    Ok(q)
}

/// A per-bin user cluster with each member's weighted in-degree in that bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub bin: usize,
    pub id: u32,
    /// Member user → weighted in-degree within the bin.
    pub members: BTreeMap<String, f64>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn total_in_degree(&self) -> f64 {
        self.members.values().sum()
    }
}

/// Rank clusters by size (ties: total weighted in-degree, then lowest member
/// id) and keep the first `k`, re-numbering them `0..k` in rank order.
pub fn top_clusters(partition: &Partition, graph: &UserGraph, bin: usize, k: usize) -> Vec<Cluster> {
    let mut groups: BTreeMap<u32, BTreeMap<String, f64>> = BTreeMap::new();
    for (user, &c) in partition {
        if let Some(idx) = graph.node_index(user) {
            groups.entry(c).or_default().insert(user.clone(), graph.in_degree(idx));
        }
    }
    let mut ranked: Vec<BTreeMap<String, f64>> = groups.into_values().collect();
    ranked.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| {
                let da: f64 = a.values().sum();
                let db: f64 = b.values().sum();
                db.partial_cmp(&da).unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| a.keys().next().cmp(&b.keys().next()))
    });
    ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(id, members)| Cluster { bin, id: id as u32, members })
        .collect()
}

/// A named seed community pinned together during clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedCommunity {
    pub name: String,
    pub users: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(src: &str, dst: &str, kind: InteractionKind, ts: i64) -> InteractionRecord {
        InteractionRecord { src: src.to_string(), dst: dst.to_string(), kind, timestamp: ts }
    }

    fn all_bin() -> TimeBin {
        TimeBin { index: 0, start: 0, end: i64::MAX }
    }

    /// Unweighted undirected edges → graph, for small fixtures.
    pub(crate) fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> UserGraph {
        let records: Vec<InteractionRecord> = edges
            .iter()
            .map(|&(a, b)| rec(&format!("u{a:02}"), &format!("u{b:02}"), InteractionKind::Reply, 0))
            .collect();
        let g = build_graph(&records, &all_bin());
        assert!(g.node_count() <= n);
        g
    }

    #[test]
    fn build_graph_aggregates_kinds() {
        let records = vec![
            rec("a", "b", InteractionKind::Reply, 10),
            rec("a", "b", InteractionKind::Mention, 20),
            rec("a", "b", InteractionKind::Retweet, 30),
        ];
        let g = build_graph(&records, &all_bin());
        assert_eq!(g.node_count(), 2);
        let a = g.node_index("a").unwrap();
        assert_eq!(g.out_edges(a), &[(g.node_index("b").unwrap(), 3.0)]);
        assert_eq!(g.in_degree_of("b"), Some(3.0));
    }

    #[test]
    fn build_graph_excludes_out_of_bin_and_self_loops() {
        let bin = TimeBin { index: 0, start: 0, end: 100 };
        let records = vec![
            rec("a", "b", InteractionKind::Reply, 50),
            rec("a", "b", InteractionKind::Reply, 500),
            rec("c", "c", InteractionKind::Mention, 50),
        ];
        let g = build_graph(&records, &bin);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.in_degree_of("b"), Some(1.0));
        assert!(g.node_index("c").is_none());
    }

    #[test]
    fn modularity_single_cluster_is_zero() {
        let g = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let partition: Partition = g.nodes().iter().map(|n| (n.clone(), 0)).collect();
        assert_relative_eq!(modularity(&g, &partition).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn modularity_barbell_triangles() {
        // Two triangles joined by one bridge edge; m = 7.
        let g = graph_from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]);
        let partition: Partition = g
            .nodes()
            .iter()
            .map(|n| {
                let i: usize = n[1..].parse().unwrap();
                (n.clone(), if i < 3 { 0 } else { 1 })
            })
            .collect();
        assert_relative_eq!(
            modularity(&g, &partition).unwrap(),
            0.357142857142857,
            epsilon = 1e-9
        );
    }

    #[test]
    fn modularity_singletons_negative_on_any_graph_with_edges() {
        let g = graph_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        let partition: Partition =
            g.nodes().iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        assert!(modularity(&g, &partition).unwrap() < 0.0);
    }

    #[test]
    fn modularity_empty_graph_errors() {
        let g = build_graph(&[], &all_bin());
        assert!(matches!(modularity(&g, &Partition::new()), Err(GraphError::EmptyGraph)));
    }

    #[test]
    fn top_clusters_ranking_and_ties() {
        let mut records = Vec::new();
        // Cluster A: 3 members, low in-degree; cluster B: 3 members, high.
        for (s, d) in [("a1", "a2"), ("a2", "a3")] {
            records.push(rec(s, d, InteractionKind::Reply, 0));
        }
        for (s, d) in [("b1", "b2"), ("b2", "b3"), ("b1", "b3"), ("b3", "b2")] {
            records.push(rec(s, d, InteractionKind::Reply, 0));
        }
        records.push(rec("c1", "c2", InteractionKind::Reply, 0));
        let g = build_graph(&records, &all_bin());
        let mut partition = Partition::new();
        for u in ["a1", "a2", "a3"] {
            partition.insert(u.to_string(), 0);
        }
        for u in ["b1", "b2", "b3"] {
            partition.insert(u.to_string(), 1);
        }
        for u in ["c1", "c2"] {
            partition.insert(u.to_string(), 2);
        }
        let clusters = top_clusters(&partition, &g, 0, 50);
        assert_eq!(clusters.len(), 3);
        // Size tie between a* and b*: b* wins on total in-degree.
        assert!(clusters[0].members.contains_key("b1"));
        assert!(clusters[1].members.contains_key("a1"));
        assert_eq!(clusters[2].size(), 2);
        assert_eq!(top_clusters(&partition, &g, 0, 1).len(), 1);
        assert_eq!(clusters.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
