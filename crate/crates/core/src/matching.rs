//! Cross-bin cluster matching into persistent community chains.
//!
//! Clusters of successive bins are compared by an in-degree-weighted Jaccard
//! score; edges below the threshold are dropped and the rest are matched
//! greedily one-to-one by descending similarity. Maximal paths through the
//! retained edges form community chains; the knee curve reports how the chain
//! count responds to the threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graphcluster::Cluster;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("grouping file references unknown chain id {0}")]
    UnknownChain(u32),
    #[error("edges reference bin pair {0}->{1} missing from the cluster list")]
    MissingBinPair(usize, usize),
}

/// A retained match between clusters of successive bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    pub prev_bin: usize,
    pub prev_cluster: u32,
    pub next_bin: usize,
    pub next_cluster: u32,
    pub similarity: f64,
}

/// A maximal path of matched clusters, at most one per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityChain {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub slices: Vec<ChainSlice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSlice {
    pub bin: usize,
    pub cluster: u32,
}

/// Weighted Jaccard over member in-degrees:
/// `Σ min(w_a(u), w_b(u)) / Σ max(w_a(u), w_b(u))` with absent members
/// contributing zero. Returns 0 when the denominator vanishes (in particular
/// when both clusters are empty).
pub fn weighted_jaccard(a: &Cluster, b: &Cluster) -> f64 {
    let mut min_sum = 0.0;
    let mut max_sum = 0.0;
    let users: BTreeSet<&String> = a.members.keys().chain(b.members.keys()).collect();
    for user in users {
        let wa = a.members.get(user).copied().unwrap_or(0.0);
        let wb = b.members.get(user).copied().unwrap_or(0.0);
        min_sum += wa.min(wb);
        max_sum += wa.max(wb);
    }
    if max_sum == 0.0 {
        0.0
    } else {
        min_sum / max_sum
    }
}

/// All pairwise similarities between two bins' clusters, indexed
/// `[prev][next]`.
pub fn similarity_matrix(prev: &[Cluster], next: &[Cluster]) -> Vec<Vec<f64>> {
    prev.iter()
        .map(|a| next.iter().map(|b| weighted_jaccard(a, b)).collect())
        .collect()
}

/// Greedy one-to-one matching over a similarity matrix: edges below
/// `threshold` are dropped, the rest are taken by descending similarity
/// (ties: lower prev index, then lower next index), each side matching at
/// most once. Returns `(prev_index, next_index, similarity)` triples.
pub fn match_from_matrix(
    matrix: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<(usize, usize, f64)>, MatchError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MatchError::BadThreshold(threshold));
    }
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in matrix.iter().enumerate() {
        for (j, &sim) in row.iter().enumerate() {
            if sim >= threshold {
                candidates.push((i, j, sim));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    let n_prev = matrix.len();
    let n_next = matrix.first().map_or(0, Vec::len);
    let mut used_prev = vec![false; n_prev];
    let mut used_next = vec![false; n_next];
    let mut matched = Vec::new();
    for (i, j, sim) in candidates {
        if !used_prev[i] && !used_next[j] {
            used_prev[i] = true;
            used_next[j] = true;
            matched.push((i, j, sim));
        }
    }
    matched.sort_by_key(|&(i, _, _)| i);
    Ok(matched)
}

/// Match two successive bins' clusters; see [`match_from_matrix`].
pub fn match_bins(
    prev: &[Cluster],
    next: &[Cluster],
    threshold: f64,
) -> Result<Vec<MatchEdge>, MatchError> {
    let matrix = similarity_matrix(prev, next);
    let matched = match_from_matrix(&matrix, threshold)?;
    Ok(matched
        .into_iter()
        .map(|(i, j, similarity)| MatchEdge {
            prev_bin: prev[i].bin,
            prev_cluster: prev[i].id,
            next_bin: next[j].bin,
            next_cluster: next[j].id,
            similarity,
        })
        .collect())
}

/// Assemble maximal paths through retained edges. Unmatched clusters become
/// singleton chains. Chain ids are assigned in (first bin, first cluster id)
/// order.
///
/// `bin_cluster_ids[b]` lists the cluster ids present in bin `b`;
/// `edges[b]` holds the matches between bins `b` and `b + 1`.
pub fn build_chains(
    bin_cluster_ids: &[Vec<u32>],
    edges: &[Vec<MatchEdge>],
) -> Result<Vec<CommunityChain>, MatchError> {
    let bins = bin_cluster_ids.len();
    // successor[(bin, cluster)] -> next cluster
    let mut successor: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    let mut has_predecessor: BTreeSet<(usize, u32)> = BTreeSet::new();
    for pair in edges {
        for e in pair {
            if e.next_bin != e.prev_bin + 1 || e.prev_bin + 1 >= bins.max(1) {
                return Err(MatchError::MissingBinPair(e.prev_bin, e.next_bin));
            }
            successor.insert((e.prev_bin, e.prev_cluster), e.next_cluster);
            has_predecessor.insert((e.next_bin, e.next_cluster));
        }
    }
    let mut chains = Vec::new();
    for (bin, ids) in bin_cluster_ids.iter().enumerate() {
        for &cluster in ids {
            if has_predecessor.contains(&(bin, cluster)) {
                continue;
            }
            let mut slices = vec![ChainSlice { bin, cluster }];
            let mut cursor = (bin, cluster);
            while let Some(&next) = successor.get(&cursor) {
                cursor = (cursor.0 + 1, next);
                slices.push(ChainSlice { bin: cursor.0, cluster: cursor.1 });
            }
            chains.push(CommunityChain { id: 0, label: None, slices });
        }
    }
    chains.sort_by_key(|c| (c.slices[0].bin, c.slices[0].cluster));
    for (id, chain) in chains.iter_mut().enumerate() {
        chain.id = id as u32;
    }
    Ok(chains)
}

/// Chain counts across a threshold sweep; the resulting curve is the knee
/// diagnostic used to pick an operating threshold.
pub fn knee_curve(
    bin_cluster_ids: &[Vec<u32>],
    matrices: &[Vec<Vec<f64>>],
    thresholds: &[f64],
) -> Result<Vec<(f64, usize)>, MatchError> {
    let mut curve = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut edges = Vec::with_capacity(matrices.len());
        for (b, matrix) in matrices.iter().enumerate() {
            let matched = match_from_matrix(matrix, t)?;
            edges.push(
                matched
                    .into_iter()
                    .map(|(i, j, similarity)| MatchEdge {
                        prev_bin: b,
                        prev_cluster: bin_cluster_ids[b][i],
                        next_bin: b + 1,
                        next_cluster: bin_cluster_ids[b + 1][j],
                        similarity,
                    })
                    .collect(),
            );
        }
        let chains = build_chains(bin_cluster_ids, &edges)?;
        curve.push((t, chains.len()));
    }
    Ok(curve)
}

/// Parse a `start:end:step` sweep specification into a threshold list,
/// inclusive of both ends.
pub fn parse_sweep(spec: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let (start, end, step): (f64, f64, f64) =
        (parts[0].parse().ok()?, parts[1].parse().ok()?, parts[2].parse().ok()?);
    if step <= 0.0 || end < start {
        return None;
    }
    let n = ((end - start) / step).round() as usize;
    Some((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Manual chain-to-label assignments, with labels that downstream analysis
/// should drop.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Grouping {
    /// Chain id → community label.
    #[serde(default)]
    pub labels: BTreeMap<u32, String>,
    /// Labels excluded from downstream analysis.
    #[serde(default)]
    pub excluded: BTreeSet<String>,
}

/// The result of applying a [`Grouping`]: every chain gets a label
/// (unmapped chains become `misc`), and excluded labels are flagged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainLabels {
    pub by_chain: BTreeMap<u32, String>,
    pub excluded: BTreeSet<String>,
}

impl ChainLabels {
    /// The label a chain carries downstream, or `None` if its label is
    /// excluded from analysis.
    pub fn downstream_label(&self, chain: u32) -> Option<&str> {
        let label = self.by_chain.get(&chain)?;
        if self.excluded.contains(label) {
            None
        } else {
            Some(label)
        }
    }
}

/// Label chains from a grouping file. Chains missing from the grouping are
/// labeled `misc`; a grouping entry for a nonexistent chain is an error.
pub fn apply_grouping(chains: &[CommunityChain], grouping: &Grouping) -> Result<ChainLabels, MatchError> {
    let known: BTreeSet<u32> = chains.iter().map(|c| c.id).collect();
    for &id in grouping.labels.keys() {
        if !known.contains(&id) {
            return Err(MatchError::UnknownChain(id));
        }
    }
    let by_chain = chains
        .iter()
        .map(|c| {
            let label = grouping.labels.get(&c.id).cloned().unwrap_or_else(|| "misc".to_string());
            (c.id, label)
        })
        .collect();
    Ok(ChainLabels { by_chain, excluded: grouping.excluded.clone() })
}
