//! Louvain modularity maximization with pinned seed communities.
//!
//! Standard local-move + aggregation, with one modification: all present
//! members of a seed set start pre-merged as a single super-node, so they can
//! never be split apart during local moves (their community may still absorb
//! other nodes). Node visit order is shuffled from the caller's rng, which
//! makes runs deterministic under a fixed seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{GraphError, Partition, SeedCommunity, UserGraph};

const MIN_GAIN: f64 = 1e-12;
const MAX_PASSES: usize = 100;

#[derive(Debug, Clone)]
pub struct LouvainResult {
    pub partition: Partition,
    /// Modularity of the working partition before any moves and after each
    /// aggregation level; non-decreasing by construction.
    pub level_modularity: Vec<f64>,
}

/// Undirected working graph; nodes are super-nodes carrying the original
/// node indices they absorbed.
struct WorkGraph {
    /// Symmetric adjacency without self-loops.
    adj: Vec<BTreeMap<usize, f64>>,
    /// Self-loop weight per node (internal weight of absorbed edges).
    loops: Vec<f64>,
    /// Original node indices per super-node.
    meta: Vec<Vec<usize>>,
    /// Total undirected edge weight including loops.
    m: f64,
}

impl WorkGraph {
    fn node_count(&self) -> usize {
        self.adj.len()
    }

    fn degree(&self, u: usize) -> f64 {
        self.adj[u].values().sum::<f64>() + 2.0 * self.loops[u]
    }

    fn from_user_graph(graph: &UserGraph) -> Self {
        let n = graph.node_count();
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut m = 0.0;
        for (u, nbrs) in graph.symmetric_adjacency().into_iter().enumerate() {
            for (v, w) in nbrs {
                adj[u].insert(v, w);
                if u < v {
                    m += w;
                }
            }
        }
        WorkGraph { adj, loops: vec![0.0; n], meta: (0..n).map(|i| vec![i]).collect(), m }
    }

    /// Collapse communities into super-nodes; total weight is preserved.
    fn aggregate(&self, node_comm: &[usize]) -> Self {
        let mut ids: Vec<usize> = node_comm.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let relabel: BTreeMap<usize, usize> =
            ids.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let k = ids.len();
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut loops = vec![0.0; k];
        let mut meta: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (u, originals) in self.meta.iter().enumerate() {
            let cu = relabel[&node_comm[u]];
            meta[cu].extend_from_slice(originals);
            loops[cu] += self.loops[u];
            for (&v, &w) in &self.adj[u] {
                let cv = relabel[&node_comm[v]];
                if cu == cv {
                    if u < v {
                        loops[cu] += w;
                    }
                } else {
                    *adj[cu].entry(cv).or_insert(0.0) += w;
                }
            }
        }
        for m in &mut meta {
            m.sort_unstable();
        }
        WorkGraph { adj, loops, meta, m: self.m }
    }

    /// Modularity of an assignment of work-graph nodes to communities.
    fn modularity(&self, node_comm: &[usize]) -> f64 {
        let mut intra: BTreeMap<usize, f64> = BTreeMap::new();
        let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
        for u in 0..self.node_count() {
            *intra.entry(node_comm[u]).or_insert(0.0) += self.loops[u];
            *degree.entry(node_comm[u]).or_insert(0.0) += self.degree(u);
            for (&v, &w) in &self.adj[u] {
                if u < v && node_comm[u] == node_comm[v] {
                    *intra.entry(node_comm[u]).or_insert(0.0) += w;
                }
            }
        }
        degree
            .iter()
            .map(|(c, d)| intra.get(c).copied().unwrap_or(0.0) / self.m - (d / (2.0 * self.m)).powi(2))
            .sum()
    }
}

/// One level of local moves. Returns whether any node changed community.
fn one_level<R: Rng>(wg: &WorkGraph, node_comm: &mut [usize], rng: &mut R) -> bool {
    let n = wg.node_count();
    let m = wg.m;
    let degrees: Vec<f64> = (0..n).map(|u| wg.degree(u)).collect();
    let mut comm_degree: BTreeMap<usize, f64> = BTreeMap::new();
    for u in 0..n {
        *comm_degree.entry(node_comm[u]).or_insert(0.0) += degrees[u];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut moved_any = false;
    for _ in 0..MAX_PASSES {
        let mut moves = 0;
        for &u in &order {
            let current = node_comm[u];
            let k = degrees[u];
            *comm_degree.get_mut(&current).unwrap() -= k;

            let mut link_weight: BTreeMap<usize, f64> = BTreeMap::new();
            for (&v, &w) in &wg.adj[u] {
                *link_weight.entry(node_comm[v]).or_insert(0.0) += w;
            }
            let gain = |c: usize| -> f64 {
                let w = link_weight.get(&c).copied().unwrap_or(0.0);
                let tot = comm_degree.get(&c).copied().unwrap_or(0.0);
                w / m - tot * k / (2.0 * m * m)
            };
            let stay = gain(current);
            let mut best_comm = current;
            let mut best_gain = stay;
            for &c in link_weight.keys() {
                if c == current {
                    continue;
                }
                let g = gain(c);
                if g > best_gain + MIN_GAIN {
                    best_gain = g;
                    best_comm = c;
                }
            }
            *comm_degree.entry(best_comm).or_insert(0.0) += k;
            if best_comm != current {
                node_comm[u] = best_comm;
                moves += 1;
                moved_any = true;
            }
        }
        if moves == 0 {
            break;
        }
    }
    moved_any
}

/// Louvain clustering with seed sets pinned as indivisible super-nodes.
///
/// Seed users absent from the graph are ignored with a warning; overlapping
/// seed sets are an error. A graph without edges leaves every node in its own
/// community.
pub fn seeded_louvain<R: Rng>(
    graph: &UserGraph,
    seeds: &[SeedCommunity],
    rng: &mut R,
) -> Result<LouvainResult, GraphError> {
    let n = graph.node_count();

    // Map each node to its pre-merge group: seed sets collapse, everything
    // else stays a singleton.
    let mut group: Vec<usize> = (0..n).collect();
    let mut claimed: BTreeMap<usize, &str> = BTreeMap::new();
    for seed in seeds {
        let mut members = Vec::new();
        for user in &seed.users {
            match graph.node_index(user) {
                Some(idx) => members.push(idx),
                None => log::warn!("seed community {}: user {user} absent from graph", seed.name),
            }
        }
        members.sort_unstable();
        members.dedup();
        for &idx in &members {
            if let Some(other) = claimed.insert(idx, &seed.name) {
                if other != seed.name {
                    return Err(GraphError::OverlappingSeeds(graph.nodes()[idx].clone()));
                }
            }
        }
        if let Some(&anchor) = members.first() {
            for &idx in &members {
                group[idx] = anchor;
            }
        }
    }

    let base = WorkGraph::from_user_graph(graph);
    if base.m == 0.0 {
        let partition: Partition =
            graph.nodes().iter().enumerate().map(|(i, u)| (u.clone(), i as u32)).collect();
        return Ok(LouvainResult { partition, level_modularity: vec![0.0] });
    }
    let mut wg = base.aggregate(&group);
    let mut trace = vec![wg.modularity(&(0..wg.node_count()).collect::<Vec<_>>())];

    loop {
        let mut node_comm: Vec<usize> = (0..wg.node_count()).collect();
        let moved = one_level(&wg, &mut node_comm, rng);
        if !moved {
            break;
        }
        let q = wg.modularity(&node_comm);
        wg = wg.aggregate(&node_comm);
        let improved = q > trace.last().unwrap() + MIN_GAIN;
        trace.push(q);
        if !improved {
            break;
        }
    }

    // Deterministic labels: communities ordered by their smallest original
    // node index.
    let mut communities: Vec<&Vec<usize>> = wg.meta.iter().collect();
    communities.sort_by_key(|members| members[0]);
    let mut partition = Partition::new();
    for (label, members) in communities.into_iter().enumerate() {
        for &idx in members {
            partition.insert(graph.nodes()[idx].clone(), label as u32);
        }
    }
    Ok(LouvainResult { partition, level_modularity: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TimeBin;
    use crate::graphcluster::{build_graph, modularity, InteractionKind, InteractionRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph_of(edges: &[(usize, usize)]) -> UserGraph {
        let records: Vec<InteractionRecord> = edges
            .iter()
            .map(|&(a, b)| InteractionRecord {
                src: format!("u{a:02}"),
                dst: format!("u{b:02}"),
                kind: InteractionKind::Reply,
                timestamp: 0,
            })
            .collect();
        build_graph(&records, &TimeBin { index: 0, start: 0, end: 100 })
    }

    fn clique(nodes: &[usize]) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                edges.push((nodes[i], nodes[j]));
            }
        }
        edges
    }

    /// Enumerate all set partitions of `n` items (restricted-growth strings).
    pub(crate) fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut current = vec![0usize; n];
        fn recurse(i: usize, max_used: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == current.len() {
                out.push(current.clone());
                return;
            }
            for c in 0..=max_used + 1 {
                current[i] = c;
                recurse(i + 1, max_used.max(c), current, out);
            }
        }
        if n > 0 {
            current[0] = 0;
            recurse(1, 0, &mut current, &mut out);
        }
        out
    }

    pub(crate) fn brute_force_best_modularity(graph: &UserGraph) -> f64 {
        let n = graph.node_count();
        let mut best = f64::NEG_INFINITY;
        for assignment in all_partitions(n) {
            let partition: Partition = graph
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, u)| (u.clone(), assignment[i] as u32))
                .collect();
            best = best.max(modularity(graph, &partition).unwrap());
        }
        best
    }

    #[test]
    fn two_cliques_recovered_without_seeds() {
        let mut edges = clique(&[0, 1, 2, 3]);
        edges.extend(clique(&[4, 5, 6, 7]));
        edges.push((3, 4));
        let g = graph_of(&edges);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let result = seeded_louvain(&g, &[], &mut rng).unwrap();
        let q = modularity(&g, &result.partition).unwrap();
        let best = brute_force_best_modularity(&g);
        assert!((best - q).abs() < 1e-9, "louvain {q} vs optimum {best}");
        // The two cliques end up in two distinct communities.
        let c0 = result.partition["u00"];
        for u in ["u01", "u02", "u03"] {
            assert_eq!(result.partition[u], c0);
        }
        let c1 = result.partition["u04"];
        assert_ne!(c0, c1);
        for u in ["u05", "u06", "u07"] {
            assert_eq!(result.partition[u], c1);
        }
    }

    #[test]
    fn seed_spanning_cliques_is_never_split() {
        let mut edges = clique(&[0, 1, 2]);
        edges.extend(clique(&[3, 4, 5]));
        let g = graph_of(&edges);
        let seeds = vec![SeedCommunity {
            name: "pinned".to_string(),
            users: vec!["u00".to_string(), "u03".to_string()],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let result = seeded_louvain(&g, &seeds, &mut rng).unwrap();
        assert_eq!(result.partition["u00"], result.partition["u03"]);
    }

    #[test]
    fn zero_edge_graph_yields_singletons() {
        let g = graph_of(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let result = seeded_louvain(&g, &[], &mut rng).unwrap();
        assert!(result.partition.is_empty());

        // A graph whose nodes exist but carry a single edge between two of
        // them still leaves the rest apart.
        let g = graph_of(&[(0, 1)]);
        let result = seeded_louvain(&g, &[], &mut rng).unwrap();
        assert_eq!(result.partition.len(), 2);
        assert_eq!(result.partition["u00"], result.partition["u01"]);
    }

    #[test]
    fn overlapping_seed_sets_error() {
        let g = graph_of(&[(0, 1), (1, 2)]);
        let seeds = vec![
            SeedCommunity { name: "a".to_string(), users: vec!["u00".to_string()] },
            SeedCommunity { name: "b".to_string(), users: vec!["u00".to_string()] },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            seeded_louvain(&g, &seeds, &mut rng),
            Err(GraphError::OverlappingSeeds(_))
        ));
    }

    #[test]
    fn absent_seed_users_are_ignored() {
        let g = graph_of(&[(0, 1)]);
        let seeds = vec![SeedCommunity {
            name: "a".to_string(),
            users: vec!["u00".to_string(), "ghost".to_string()],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let result = seeded_louvain(&g, &seeds, &mut rng).unwrap();
        assert_eq!(result.partition.len(), 2);
    }

    #[test]
    fn level_modularity_is_monotone() {
        let mut edges = clique(&[0, 1, 2, 3]);
        edges.extend(clique(&[4, 5, 6]));
        edges.extend(clique(&[7, 8, 9]));
        edges.push((0, 4));
        edges.push((5, 7));
        let g = graph_of(&edges);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let result = seeded_louvain(&g, &[], &mut rng).unwrap();
        for w in result.level_modularity.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "trace not monotone: {:?}", result.level_modularity);
        }
    }

    #[test]
    fn partition_beats_all_in_one_on_disconnected_graphs() {
        let mut edges = clique(&[0, 1, 2]);
        edges.extend(clique(&[3, 4, 5]));
        let g = graph_of(&edges);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let result = seeded_louvain(&g, &[], &mut rng).unwrap();
        let q = modularity(&g, &result.partition).unwrap();
        let all_one: Partition = g.nodes().iter().map(|u| (u.clone(), 0)).collect();
        assert!(q >= modularity(&g, &all_one).unwrap());
    }

    #[test]
    fn seed_members_share_final_community_on_random_graphs() {
        use rand::Rng;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(6..12);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.4) {
                        edges.push((i, j));
                    }
                }
            }
            if edges.is_empty() {
                continue;
            }
            let g = graph_of(&edges);
            let present: Vec<String> = g.nodes().to_vec();
            if present.len() < 4 {
                continue;
            }
            let seeds = vec![
                SeedCommunity { name: "s0".to_string(), users: present[0..2].to_vec() },
                SeedCommunity { name: "s1".to_string(), users: present[2..4].to_vec() },
            ];
            let result = seeded_louvain(&g, &seeds, &mut rng).unwrap();
            for s in &seeds {
                let labels: Vec<u32> = s.users.iter().map(|u| result.partition[u]).collect();
                assert!(labels.windows(2).all(|w| w[0] == w[1]), "seed split: {labels:?}");
            }
        }
    }
}
