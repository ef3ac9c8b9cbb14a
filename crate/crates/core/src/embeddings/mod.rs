//! Skipgram embeddings with decomposed input vectors.
//!
//! Every output embedding `u_v` is a plain dense vector. Input embeddings
//! decompose additively: a base vector `b_v`, plus a per-(term, bin) temporal
//! residual, plus a per-(term, bin, community) community-temporal residual.
//! Residuals are regularized toward zero during training so that the base
//! vector carries the core meaning and residuals carry deviations.
//!
//! Residual tables are sparse: entries exist only for combinations observed
//! at least `min_count_bin` times in the training data; rarer combinations
//! fall back to the coarser embedding.

mod io;
mod train;

pub mod gradcheck;

pub use io::{read_model, write_model, write_text_export};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{bin_of, Document, TimeBin, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("unknown term {0:?}")]
    UnknownTerm(String),
    #[error("unknown community {0:?}")]
    UnknownCommunity(String),
    #[error("bin {bin} out of range (model has {bins} bins)")]
    BadBin { bin: usize, bins: usize },
    #[error("document {0} has no community label")]
    MissingCommunityLabel(String),
    #[error("document {doc_id} at timestamp {timestamp} falls outside every bin")]
    UnbinnedDocument { doc_id: String, timestamp: i64 },
    #[error("term {0:?} has a zero-norm vector; cosine is undefined")]
    ZeroNormVector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file malformed: {0}")]
    Format(String),
}

/// Training hyperparameters. The learning rate decays linearly from
/// `lr_initial` to `lr_final` over the planned number of center-word updates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    /// Context window: pairs form within `window` positions of the center.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Decoupled L2 shrinkage strength on temporal residuals.
    pub lambda_temporal: f64,
    /// Decoupled L2 shrinkage strength on community-temporal residuals.
    pub lambda_community: f64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    /// Minimum per-bin occurrences for a residual table entry to exist.
    pub min_count_bin: u64,
    pub seed: u64,
    /// 1 trains deterministically; more run hogwild-style workers that
    /// update shared tables without synchronization.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr_initial: 0.025,
            lr_final: 1e-4,
            lambda_temporal: 1e-3,
            lambda_community: 1e-3,
            subsample: 1e-4,
            min_count_bin: 5,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let fail = |m: &str| Err(EmbeddingError::BadConfig(m.to_string()));
        if self.dim == 0 {
            return fail("dimension must be at least 1");
        }
        if self.window == 0 {
            return fail("context window must be at least 1");
        }
        if self.negatives == 0 {
            return fail("negative sample count must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epoch count must be at least 1");
        }
        if self.lambda_temporal < 0.0 || self.lambda_community < 0.0 {
            return fail("regularization strengths must be non-negative");
        }
        if self.lr_initial <= 0.0 || self.lr_final < 0.0 {
            return fail("learning rates must be positive");
        }
        if self.threads == 0 {
            return fail("thread count must be at least 1");
        }
        Ok(())
    }
}

/// An `f64` cell supporting unsynchronized concurrent updates. Reads and
/// writes are relaxed atomics; `add` is load-add-store, so concurrent
/// increments may be lost, which the hogwild training contract tolerates.
pub(crate) struct AtomicF64(AtomicU64);

impl AtomicF64 {
    fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    #[inline]
    pub(crate) fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    pub(crate) fn set(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed);
    }
}

/// A rows × dim table of shared-mutable parameters.
pub(crate) struct ParamTable {
    dim: usize,
    data: Vec<AtomicF64>,
}

impl ParamTable {
    fn zeros(rows: usize, dim: usize) -> Self {
        ParamTable { dim, data: (0..rows * dim).map(|_| AtomicF64::new(0.0)).collect() }
    }

    pub(crate) fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    #[inline]
    fn slice(&self, row: usize) -> &[AtomicF64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn read_row(&self, row: usize, out: &mut [f64]) {
        for (o, cell) in out.iter_mut().zip(self.slice(row)) {
            *o = cell.get();
        }
    }

    pub(crate) fn row_vec(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.read_row(row, &mut out);
        out
    }

    #[inline]
    pub(crate) fn add_into(&self, row: usize, out: &mut [f64]) {
        for (o, cell) in out.iter_mut().zip(self.slice(row)) {
            *o += cell.get();
        }
    }

    #[inline]
    pub(crate) fn axpy_row(&self, row: usize, coef: f64, v: &[f64]) {
        for (cell, &x) in self.slice(row).iter().zip(v) {
            cell.set(cell.get() + coef * x);
        }
    }

    #[inline]
    pub(crate) fn scale_row(&self, row: usize, factor: f64) {
        for cell in self.slice(row) {
            cell.set(cell.get() * factor);
        }
    }

    pub(crate) fn write_row(&self, row: usize, vals: &[f64]) {
        for (cell, &x) in self.slice(row).iter().zip(vals) {
            cell.set(x);
        }
    }

    pub(crate) fn get(&self, row: usize, coord: usize) -> f64 {
        self.data[row * self.dim + coord].get()
    }

    pub(crate) fn set(&self, row: usize, coord: usize, v: f64) {
        self.data[row * self.dim + coord].set(v);
    }
}

impl Clone for ParamTable {
    fn clone(&self) -> Self {
        ParamTable {
            dim: self.dim,
            data: self.data.iter().map(|c| AtomicF64::new(c.get())).collect(),
        }
    }
}

/// Sparse residual storage keyed by observed combinations, with rows sorted
/// by key for deterministic serialization.
pub(crate) struct SparseTable<K> {
    keys: Vec<K>,
    index: HashMap<K, usize>,
    pub(crate) data: ParamTable,
}

impl<K: Copy + Ord + std::hash::Hash> SparseTable<K> {
    fn new(mut keys: Vec<K>, dim: usize) -> Self {
        keys.sort_unstable();
        keys.dedup();
        let index = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let data = ParamTable::zeros(keys.len(), dim);
        SparseTable { keys, index, data }
    }

    #[inline]
    pub(crate) fn row_of(&self, key: &K) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub(crate) fn keys(&self) -> &[K] {
        &self.keys
    }

    pub(crate) fn len(&self) -> usize {
        self.keys.len()
    }
}

impl<K: Copy + Ord + std::hash::Hash> Clone for SparseTable<K> {
    fn clone(&self) -> Self {
        SparseTable { keys: self.keys.clone(), index: self.index.clone(), data: self.data.clone() }
    }
}

/// One document reduced to vocabulary indices with its bin and community.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainDocument {
    pub tokens: Vec<u32>,
    pub bin: u16,
    pub community: u16,
}

/// Map documents to [`TrainDocument`]s, skipping out-of-vocabulary tokens.
/// Returns the sorted community label set alongside. Documents without a
/// community label or outside every bin are errors.
pub fn prepare_documents(
    docs: &[Document],
    vocab: &Vocabulary,
    bins: &[TimeBin],
) -> Result<(Vec<TrainDocument>, Vec<String>), EmbeddingError> {
    let mut labels: Vec<String> = docs
        .iter()
        .map(|d| {
            d.community
                .clone()
                .ok_or_else(|| EmbeddingError::MissingCommunityLabel(d.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    labels.sort();
    labels.dedup();
    let label_index: HashMap<&str, u16> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u16)).collect();

    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let bin = bin_of(bins, doc.timestamp).ok_or_else(|| EmbeddingError::UnbinnedDocument {
            doc_id: doc.id.clone(),
            timestamp: doc.timestamp,
        })?;
        let tokens: Vec<u32> = doc.tokens.iter().filter_map(|t| vocab.index_of(t)).collect();
        out.push(TrainDocument {
            tokens,
            bin: bin as u16,
            community: label_index[doc.community.as_deref().unwrap()],
        });
    }
    Ok((out, labels))
}

/// Skipgram model with decomposed input embeddings.
pub struct EmbeddingModel {
    vocab: Vocabulary,
    communities: Vec<String>,
    community_index: HashMap<String, u16>,
    bins: usize,
    dim: usize,
    pub(crate) base: ParamTable,
    pub(crate) output: ParamTable,
    pub(crate) temporal: SparseTable<(u32, u16)>,
    pub(crate) community: SparseTable<(u32, u16, u16)>,
}

impl std::fmt::Debug for EmbeddingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingModel")
            .field("vocab", &self.vocab.len())
            .field("communities", &self.communities)
            .field("bins", &self.bins)
            .field("dim", &self.dim)
            .field("temporal_entries", &self.temporal.len())
            .field("community_entries", &self.community.len())
            .finish()
    }
}

impl Clone for EmbeddingModel {
    fn clone(&self) -> Self {
        EmbeddingModel {
            vocab: self.vocab.clone(),
            communities: self.communities.clone(),
            community_index: self.community_index.clone(),
            bins: self.bins,
            dim: self.dim,
            base: self.base.clone(),
            output: self.output.clone(),
            temporal: self.temporal.clone(),
            community: self.community.clone(),
        }
    }
}

impl EmbeddingModel {
    /// Initialize a model: base and output vectors drawn uniformly from
    /// `[-0.5/dim, 0.5/dim]` under the configured seed, residual entries
    /// allocated for each (term, bin[, community]) combination observed at
    /// least `min_count_bin` times in `docs`, all starting at exactly zero.
    pub fn init(
        vocab: Vocabulary,
        bins: usize,
        communities: Vec<String>,
        docs: &[TrainDocument],
        config: &TrainConfig,
    ) -> Result<Self, EmbeddingError> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(EmbeddingError::EmptyVocabulary);
        }
        let dim = config.dim;
        let v = vocab.len();

        let mut temporal_counts: HashMap<(u32, u16), u64> = HashMap::new();
        let mut community_counts: HashMap<(u32, u16, u16), u64> = HashMap::new();
        for doc in docs {
            for &tok in &doc.tokens {
                *temporal_counts.entry((tok, doc.bin)).or_insert(0) += 1;
                *community_counts.entry((tok, doc.bin, doc.community)).or_insert(0) += 1;
            }
        }
        fn keep<K: Copy>(counts: HashMap<K, u64>, floor: u64) -> Vec<K> {
            counts.into_iter().filter(|&(_, c)| c >= floor).map(|(k, _)| k).collect()
        }
        let temporal = SparseTable::new(keep(temporal_counts, config.min_count_bin), dim);
        let community = SparseTable::new(keep(community_counts, config.min_count_bin), dim);

        let base = ParamTable::zeros(v, dim);
        let output = ParamTable::zeros(v, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let half = 0.5 / dim as f64;
        let mut buf = vec![0.0; dim];
        for table in [&base, &output] {
            for row in 0..v {
                for x in buf.iter_mut() {
                    *x = rng.gen_range(-half..=half);
                }
                table.write_row(row, &buf);
            }
        }

        let community_index =
            communities.iter().enumerate().map(|(i, l)| (l.clone(), i as u16)).collect();
        Ok(EmbeddingModel {
            vocab,
            communities,
            community_index,
            bins,
            dim,
            base,
            output,
            temporal,
            community,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn communities(&self) -> &[String] {
        &self.communities
    }

    pub fn community_index(&self, label: &str) -> Option<u16> {
        self.community_index.get(label).copied()
    }

    pub fn term_index(&self, term: &str) -> Result<u32, EmbeddingError> {
        self.vocab.index_of(term).ok_or_else(|| EmbeddingError::UnknownTerm(term.to_string()))
    }

    fn check_bin(&self, bin: usize) -> Result<(), EmbeddingError> {
        if bin >= self.bins {
            Err(EmbeddingError::BadBin { bin, bins: self.bins })
        } else {
            Ok(())
        }
    }

    /// Compose `b_v (+ r^{(t)}) (+ r^{(t,s)})` into `out`; absent residual
    /// entries contribute zero.
    pub(crate) fn compose_into(&self, term: u32, bin: u16, community: Option<u16>, out: &mut [f64]) {
        self.base.read_row(term as usize, out);
        if let Some(row) = self.temporal.row_of(&(term, bin)) {
            self.temporal.data.add_into(row, out);
        }
        if let Some(s) = community {
            if let Some(row) = self.community.row_of(&(term, bin, s)) {
                self.community.data.add_into(row, out);
            }
        }
    }

    /// The input embedding of `term` at `bin`, optionally specialized to a
    /// community.
    pub fn input_embedding(
        &self,
        term: &str,
        bin: usize,
        community: Option<&str>,
    ) -> Result<Vec<f64>, EmbeddingError> {
        let v = self.term_index(term)?;
        self.check_bin(bin)?;
        let s = match community {
            Some(label) => Some(
                self.community_index(label)
                    .ok_or_else(|| EmbeddingError::UnknownCommunity(label.to_string()))?,
            ),
            None => None,
        };
        let mut out = vec![0.0; self.dim];
        self.compose_into(v, bin as u16, s, &mut out);
        Ok(out)
    }

    pub fn base_vector(&self, term: &str) -> Result<Vec<f64>, EmbeddingError> {
        Ok(self.base.row_vec(self.term_index(term)? as usize))
    }

    pub fn output_vector(&self, term: &str) -> Result<Vec<f64>, EmbeddingError> {
        Ok(self.output.row_vec(self.term_index(term)? as usize))
    }

    /// The stored temporal residual, if the (term, bin) entry exists.
    pub fn temporal_residual(&self, term: &str, bin: usize) -> Result<Option<Vec<f64>>, EmbeddingError> {
        let v = self.term_index(term)?;
        self.check_bin(bin)?;
        Ok(self.temporal.row_of(&(v, bin as u16)).map(|r| self.temporal.data.row_vec(r)))
    }

    /// The stored community-temporal residual, if the entry exists.
    pub fn community_residual(
        &self,
        term: &str,
        bin: usize,
        community: &str,
    ) -> Result<Option<Vec<f64>>, EmbeddingError> {
        let v = self.term_index(term)?;
        self.check_bin(bin)?;
        let s = self
            .community_index(community)
            .ok_or_else(|| EmbeddingError::UnknownCommunity(community.to_string()))?;
        Ok(self.community.row_of(&(v, bin as u16, s)).map(|r| self.community.data.row_vec(r)))
    }

    /// Residual norms, used to verify shrinkage behavior.
    pub fn max_residual_norm(&self) -> f64 {
        let mut max = 0.0f64;
        for table in [&self.temporal.data, &self.community.data] {
            for row in 0..table.rows() {
                let norm = table.row_vec(row).iter().map(|x| x * x).sum::<f64>().sqrt();
                max = max.max(norm);
            }
        }
        max
    }

    /// Top-`k` terms by cosine between the query's input embedding and every
    /// other term's base-plus-temporal embedding at the same bin.
    pub fn nearest_neighbors(
        &self,
        term: &str,
        bin: usize,
        k: usize,
        community: Option<&str>,
    ) -> Result<Vec<(String, f64)>, EmbeddingError> {
        let v = self.term_index(term)?;
        let index = NeighborIndex::build(self, bin)?;
        let query = self.input_embedding(term, bin, community)?;
        let hits = index.neighbors_of_vector(&query, k, Some(v)).map_err(|_| {
            EmbeddingError::ZeroNormVector(term.to_string())
        })?;
        Ok(hits.into_iter().map(|(t, cos)| (self.vocab.term(t).to_string(), cos)).collect())
    }
}

/// Per-bin matrix of unit-normalized base-plus-temporal input embeddings,
/// reused across neighbor queries.
pub struct NeighborIndex {
    dim: usize,
    unit: Vec<f64>,
    zero: Vec<bool>,
}

/// Marker error: the query vector has zero norm.
#[derive(Debug)]
pub struct ZeroNormQuery;

impl NeighborIndex {
    pub fn build(model: &EmbeddingModel, bin: usize) -> Result<Self, EmbeddingError> {
        model.check_bin(bin)?;
        let v = model.vocab.len();
        let dim = model.dim;
        let mut unit = vec![0.0; v * dim];
        let mut zero = vec![false; v];
        let mut buf = vec![0.0; dim];
        for term in 0..v {
            model.compose_into(term as u32, bin as u16, None, &mut buf);
            let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero[term] = true;
                continue;
            }
            for (slot, &x) in unit[term * dim..(term + 1) * dim].iter_mut().zip(&buf) {
                *slot = x / norm;
            }
        }
        Ok(NeighborIndex { dim, unit, zero })
    }

    /// Rank all indexed terms against `query` by cosine, skipping zero-norm
    /// candidates and optionally the query term itself.
    pub fn neighbors_of_vector(
        &self,
        query: &[f64],
        k: usize,
        exclude: Option<u32>,
    ) -> Result<Vec<(u32, f64)>, ZeroNormQuery> {
        let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ZeroNormQuery);
        }
        let v = self.zero.len();
        let mut scored: Vec<(u32, f64)> = Vec::with_capacity(v);
        for term in 0..v {
            if self.zero[term] || exclude == Some(term as u32) {
                continue;
            }
            let row = &self.unit[term * self.dim..(term + 1) * self.dim];
            let dot: f64 = row.iter().zip(query).map(|(a, b)| a * b).sum();
            scored.push((term as u32, dot / norm));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }
}
