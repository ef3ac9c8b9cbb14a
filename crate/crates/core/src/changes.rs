//! Semantic-change ranking by temporal near-neighbor divergence.
//!
//! A term's change score between two bins is `1 − |N_k(t1) ∩ N_k(t2)| / k`
//! over the k nearest neighbors of its community-agnostic (base plus
//! temporal residual) embedding at each bin. Terms below a per-bin frequency
//! floor in either bin are skipped, not errored.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingError, EmbeddingModel, NeighborIndex};

#[derive(Debug, thiserror::Error)]
pub enum ChangeError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("bin pair ({0}, {1}) is not ordered t1 < t2")]
    UnorderedPair(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One ranked semantic-change triple with its supporting neighbor lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeCandidate {
    pub term: String,
    pub t1: usize,
    pub t2: usize,
    pub score: f64,
    pub neighbors_t1: Vec<String>,
    pub neighbors_t2: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangesConfig {
    /// Neighbor set size.
    pub k: usize,
    /// Number of ranked candidates to keep.
    pub top_m: usize,
    /// Minimum occurrences in each of the two bins for a term to be scored.
    pub min_bin_count: u64,
}

impl Default for ChangesConfig {
    fn default() -> Self {
        ChangesConfig { k: 25, top_m: 500, min_bin_count: 20 }
    }
}

/// Change score for one term between two bins, or `None` when the term falls
/// below the frequency floor in either bin. Neighbor sets come from the
/// prebuilt per-bin indexes.
fn score_with_indexes(
    model: &EmbeddingModel,
    index_t1: &NeighborIndex,
    index_t2: &NeighborIndex,
    term_idx: u32,
    t1: usize,
    t2: usize,
    config: &ChangesConfig,
) -> Result<Option<(f64, Vec<u32>, Vec<u32>)>, ChangeError> {
    let vocab = model.vocab();
    if vocab.bin_count(term_idx, t1) < config.min_bin_count
        || vocab.bin_count(term_idx, t2) < config.min_bin_count
    {
        return Ok(None);
    }
    let term = vocab.term(term_idx).to_string();
    let q1 = model.input_embedding(&term, t1, None)?;
    let q2 = model.input_embedding(&term, t2, None)?;
    let n1 = index_t1
        .neighbors_of_vector(&q1, config.k, Some(term_idx))
        .map_err(|_| EmbeddingError::ZeroNormVector(term.clone()))?;
    let n2 = index_t2
        .neighbors_of_vector(&q2, config.k, Some(term_idx))
        .map_err(|_| EmbeddingError::ZeroNormVector(term.clone()))?;
    let ids1: Vec<u32> = n1.into_iter().map(|(t, _)| t).collect();
    let ids2: Vec<u32> = n2.into_iter().map(|(t, _)| t).collect();
    let set1: BTreeSet<u32> = ids1.iter().copied().collect();
    let overlap = ids2.iter().filter(|t| set1.contains(t)).count();
    let k_eff = ids1.len().max(ids2.len()).max(1);
    let score = 1.0 - overlap as f64 / k_eff as f64;
    Ok(Some((score, ids1, ids2)))
}

/// Change score for one term between two bins; `None` signals the frequency
/// floor was not met.
pub fn change_score(
    model: &EmbeddingModel,
    term: &str,
    t1: usize,
    t2: usize,
    config: &ChangesConfig,
) -> Result<Option<f64>, ChangeError> {
    if t1 >= t2 {
        return Err(ChangeError::UnorderedPair(t1, t2));
    }
    let term_idx = model.term_index(term)?;
    let index_t1 = NeighborIndex::build(model, t1)?;
    let index_t2 = NeighborIndex::build(model, t2)?;
    Ok(score_with_indexes(model, &index_t1, &index_t2, term_idx, t1, t2, config)?
        .map(|(score, _, _)| score))
}

/// Score every vocabulary term over the given bin pairs (all ordered pairs
/// when `pairs` is `None`) and return the `top_m` candidates sorted by score
/// descending, ties broken by higher total frequency then lexicographically.
pub fn rank_changes(
    model: &EmbeddingModel,
    pairs: Option<&[(usize, usize)]>,
    config: &ChangesConfig,
) -> Result<Vec<ChangeCandidate>, ChangeError> {
    let bins = model.bins();
    let all_pairs: Vec<(usize, usize)> = match pairs {
        Some(ps) => {
            for &(a, b) in ps {
                if a >= b {
                    return Err(ChangeError::UnorderedPair(a, b));
                }
            }
            ps.to_vec()
        }
        None => {
            let mut ps = Vec::new();
            for a in 0..bins {
                for b in a + 1..bins {
                    ps.push((a, b));
                }
            }
            ps
        }
    };

    let mut indexes: Vec<Option<NeighborIndex>> = (0..bins).map(|_| None).collect();
    for &(a, b) in &all_pairs {
        for bin in [a, b] {
            if indexes[bin].is_none() {
                indexes[bin] = Some(NeighborIndex::build(model, bin)?);
            }
        }
    }

    let vocab = model.vocab();
    let mut candidates = Vec::new();
    for &(t1, t2) in &all_pairs {
        let (i1, i2) = (indexes[t1].as_ref().unwrap(), indexes[t2].as_ref().unwrap());
        for term_idx in 0..vocab.len() as u32 {
            if let Some((score, n1, n2)) =
                score_with_indexes(model, i1, i2, term_idx, t1, t2, config)?
            {
                candidates.push(ChangeCandidate {
                    term: vocab.term(term_idx).to_string(),
                    t1,
                    t2,
                    score,
                    neighbors_t1: n1.into_iter().map(|t| vocab.term(t).to_string()).collect(),
                    neighbors_t2: n2.into_iter().map(|t| vocab.term(t).to_string()).collect(),
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let fa = model.vocab().index_of(&a.term).map(|i| model.vocab().total_count(i));
                let fb = model.vocab().index_of(&b.term).map(|i| model.vocab().total_count(i));
                fb.cmp(&fa)
            })
            .then_with(|| a.term.cmp(&b.term))
            .then_with(|| (a.t1, a.t2).cmp(&(b.t1, b.t2)))
    });
    candidates.truncate(config.top_m);
    Ok(candidates)
}

/// TSV export: `term, t1, t2, score, neighbors_t1, neighbors_t2` with
/// comma-joined neighbor lists.
pub fn write_changes_tsv<W: Write>(
    candidates: &[ChangeCandidate],
    mut w: W,
) -> Result<(), ChangeError> {
    writeln!(w, "term\tt1\tt2\tscore\tneighbors_t1\tneighbors_t2")?;
    for c in candidates {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            c.term,
            c.t1,
            c.t2,
            c.score,
            c.neighbors_t1.join(","),
            c.neighbors_t2.join(",")
        )?;
    }
    Ok(())
}

pub fn read_changes_tsv<R: std::io::BufRead>(r: R) -> Result<Vec<ChangeCandidate>, ChangeError> {
    let bad = |line: usize, msg: String| ChangeError::Io(std::io::Error::other(format!("line {line}: {msg}")));
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, "expected 6 tab-separated fields".to_string()));
        }
        let parse_list = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',').map(str::to_string).collect()
            }
        };
        out.push(ChangeCandidate {
            term: fields[0].to_string(),
            t1: fields[1].parse().map_err(|e: std::num::ParseIntError| bad(i + 1, e.to_string()))?,
            t2: fields[2].parse().map_err(|e: std::num::ParseIntError| bad(i + 1, e.to_string()))?,
            score: fields[3].parse().map_err(|e: std::num::ParseFloatError| bad(i + 1, e.to_string()))?,
            neighbors_t1: parse_list(fields[4]),
            neighbors_t2: parse_list(fields[5]),
        });
    }
    Ok(out)
}
