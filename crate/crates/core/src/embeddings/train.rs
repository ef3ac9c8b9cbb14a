//! Negative-sampling skipgram training over decomposed input embeddings.
//!
//! For each (center, context) pair within the window the objective is
//! `log σ(u_ctx · x) + Σ_neg log σ(−u_neg · x)` with
//! `x = b + r^{(t)} + r^{(t,s)}`. All components of `x` receive the same
//! input gradient; after each gradient step, residuals shrink by the
//! decoupled factor `max(0, 1 − η·λ)`.
//!
//! With `threads == 1` training is single-threaded and bit-reproducible under
//! a fixed seed. With more threads, workers update the shared tables without
//! synchronization and tolerate lost updates.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingError, EmbeddingModel, SparseTable, TrainConfig, TrainDocument};

/// Which parameter classes a training run may update.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UpdateMask {
    pub base: bool,
    pub temporal: bool,
    pub community: bool,
    pub output: bool,
}

impl UpdateMask {
    pub(crate) const ALL: UpdateMask =
        UpdateMask { base: true, temporal: true, community: true, output: true };
    pub(crate) const COMMUNITY_ONLY: UpdateMask =
        UpdateMask { base: false, temporal: false, community: true, output: false };
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` computed without overflow.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss and score gradients of one pair against fixed vectors. `negs_flat`
/// holds the negative output vectors back to back. Returns
/// `(loss, g_pos)` and fills `g_negs`, where `g_pos = σ(u_ctx·x) − 1` and
/// `g_neg = σ(u_neg·x)` are `∂loss/∂score`. The parameter gradients follow:
/// `∂loss/∂x = g_pos·u_ctx + Σ g_neg·u_neg` (shared by every component of
/// `x`) and `∂loss/∂u = g·x` for each output vector.
pub(crate) fn pair_stats(
    x: &[f64],
    u_ctx: &[f64],
    negs_flat: &[f64],
    dim: usize,
    g_negs: &mut Vec<f64>,
) -> (f64, f64) {
    let pos_score: f64 = u_ctx.iter().zip(x).map(|(a, b)| a * b).sum();
    let mut loss = -log_sigmoid(pos_score);
    let g_pos = sigmoid(pos_score) - 1.0;
    g_negs.clear();
    for u in negs_flat.chunks_exact(dim) {
        let score: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
        loss -= log_sigmoid(-score);
        g_negs.push(sigmoid(score));
    }
    (loss, g_pos)
}

struct NegativeSampler {
    dist: WeightedIndex<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64).powf(0.75)).collect();
        NegativeSampler { dist: WeightedIndex::new(weights).expect("non-empty vocabulary") }
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        self.dist.sample(rng) as u32
    }
}

/// Per-epoch mean pair loss.
pub type LossTrace = Vec<f64>;

struct Shared<'a> {
    model: &'a EmbeddingModel,
    sampler: NegativeSampler,
    keep_factor: Vec<f64>,
    planned_updates: u64,
    processed: AtomicU64,
    config: &'a TrainConfig,
    mask: UpdateMask,
}

impl EmbeddingModel {
    /// Train all parameter classes on `docs`.
    pub fn train(
        &mut self,
        docs: &[TrainDocument],
        config: &TrainConfig,
    ) -> Result<LossTrace, EmbeddingError> {
        config.validate()?;
        self.validate_docs(docs)?;
        Ok(run_training(self, docs, config, UpdateMask::ALL, config.epochs))
    }

    /// Clone this model with community-temporal residuals rebuilt for the
    /// combinations observed in `docs`, zero-initialized and trained for
    /// `epochs` epochs while every other parameter class stays frozen.
    pub fn retrain_community_residuals(
        &self,
        docs: &[TrainDocument],
        config: &TrainConfig,
        epochs: usize,
    ) -> Result<EmbeddingModel, EmbeddingError> {
        config.validate()?;
        self.validate_docs(docs)?;
        let mut counts: std::collections::HashMap<(u32, u16, u16), u64> =
            std::collections::HashMap::new();
        for doc in docs {
            for &tok in &doc.tokens {
                *counts.entry((tok, doc.bin, doc.community)).or_insert(0) += 1;
            }
        }
        let keys: Vec<(u32, u16, u16)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= config.min_count_bin)
            .map(|(k, _)| k)
            .collect();
        let mut clone = self.clone();
        clone.community = SparseTable::new(keys, self.dim);
        run_training(&clone, docs, config, UpdateMask::COMMUNITY_ONLY, epochs);
        Ok(clone)
    }

    fn validate_docs(&self, docs: &[TrainDocument]) -> Result<(), EmbeddingError> {
        for doc in docs {
            if doc.bin as usize >= self.bins {
                return Err(EmbeddingError::BadBin { bin: doc.bin as usize, bins: self.bins });
            }
            if doc.community as usize >= self.communities.len() {
                return Err(EmbeddingError::UnknownCommunity(format!("index {}", doc.community)));
            }
        }
        Ok(())
    }
}

fn run_training(
    model: &EmbeddingModel,
    docs: &[TrainDocument],
    config: &TrainConfig,
    mask: UpdateMask,
    epochs: usize,
) -> LossTrace {
    let counts: Vec<u64> =
        (0..model.vocab.len() as u32).map(|v| model.vocab.total_count(v)).collect();
    let total_tokens: u64 = docs.iter().map(|d| d.tokens.len() as u64).sum();

    // word2vec-style keep probability per term; >= 1 means always kept.
    let keep_factor: Vec<f64> = if config.subsample > 0.0 {
        let k = config.subsample * total_tokens as f64;
        counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    1.0
                } else {
                    let f = c as f64;
                    ((f / k).sqrt() + 1.0) * k / f
                }
            })
            .collect()
    } else {
        vec![1.0; counts.len()]
    };

    let shared = Shared {
        model,
        sampler: NegativeSampler::new(&counts),
        keep_factor,
        planned_updates: (epochs as u64 * total_tokens).max(1),
        processed: AtomicU64::new(0),
        config,
        mask,
    };

    let mut trace = Vec::with_capacity(epochs);
    if config.threads <= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x736b6970));
        for _ in 0..epochs {
            let (loss, pairs) = train_chunk(&shared, docs, &mut rng);
            trace.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
        }
    } else {
        let chunk_len = docs.len().div_ceil(config.threads).max(1);
        let chunks: Vec<&[TrainDocument]> = docs.chunks(chunk_len).collect();
        for epoch in 0..epochs {
            let results: Vec<(f64, u64)> = {
                use rayon::prelude::*;
                chunks
                    .par_iter()
                    .enumerate()
                    .map(|(i, chunk)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            config
                                .seed
                                .wrapping_mul(0x9e3779b97f4a7c15)
                                .wrapping_add((epoch * chunks.len() + i) as u64),
                        );
                        train_chunk(&shared, chunk, &mut rng)
                    })
                    .collect()
            };
            let (loss, pairs) =
                results.iter().fold((0.0, 0u64), |(l, p), &(cl, cp)| (l + cl, p + cp));
            trace.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
        }
    }
    trace
}

fn train_chunk(shared: &Shared, docs: &[TrainDocument], rng: &mut ChaCha8Rng) -> (f64, u64) {
    let model = shared.model;
    let config = shared.config;
    let dim = model.dim;
    let window = config.window;
    let subsampling = config.subsample > 0.0;

    let mut kept: Vec<u32> = Vec::new();
    let mut x = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let mut u_ctx = vec![0.0; dim];
    let mut negs_flat: Vec<f64> = Vec::with_capacity(config.negatives * dim);
    let mut neg_ids: Vec<u32> = Vec::with_capacity(config.negatives);
    let mut g_negs: Vec<f64> = Vec::with_capacity(config.negatives);
    let mut loss_sum = 0.0;
    let mut pair_count = 0u64;

    for doc in docs {
        let t = doc.bin;
        let s = doc.community;
        kept.clear();
        for &tok in &doc.tokens {
            if subsampling && shared.keep_factor[tok as usize] < rng.gen::<f64>() {
                continue;
            }
            kept.push(tok);
        }

        for j in 0..kept.len() {
            let center = kept[j];
            let processed = shared.processed.fetch_add(1, Ordering::Relaxed);
            let progress = (processed as f64 / shared.planned_updates as f64).min(1.0);
            let eta = config.lr_initial + (config.lr_final - config.lr_initial) * progress;

            let base_row = center as usize;
            let temporal_row = model.temporal.row_of(&(center, t));
            let community_row = model.community.row_of(&(center, t, s));
            let shrink_t = (1.0 - eta * config.lambda_temporal).max(0.0);
            let shrink_s = (1.0 - eta * config.lambda_community).max(0.0);

            let lo = j.saturating_sub(window);
            let hi = (j + window).min(kept.len() - 1);
            for j2 in lo..=hi {
                if j2 == j {
                    continue;
                }
                let ctx = kept[j2];

                // Compose x fresh: earlier pairs may have moved the inputs.
                model.base.read_row(base_row, &mut x);
                if let Some(r) = temporal_row {
                    model.temporal.data.add_into(r, &mut x);
                }
                if let Some(r) = community_row {
                    model.community.data.add_into(r, &mut x);
                }

                model.output.read_row(ctx as usize, &mut u_ctx);
                neg_ids.clear();
                negs_flat.clear();
                for _ in 0..config.negatives {
                    let neg = shared.sampler.sample(rng);
                    // A draw that hits the context word is skipped.
                    if neg == ctx {
                        continue;
                    }
                    neg_ids.push(neg);
                    let start = negs_flat.len();
                    negs_flat.resize(start + dim, 0.0);
                    model.output.read_row(neg as usize, &mut negs_flat[start..]);
                }

                let (loss, g_pos) = pair_stats(&x, &u_ctx, &negs_flat, dim, &mut g_negs);
                loss_sum += loss;

                gx.iter_mut().for_each(|g| *g = 0.0);
                for (gxi, &ui) in gx.iter_mut().zip(&u_ctx) {
                    *gxi += g_pos * ui;
                }
                for (i, u) in negs_flat.chunks_exact(dim).enumerate() {
                    let g = g_negs[i];
                    for (gxi, &ui) in gx.iter_mut().zip(u) {
                        *gxi += g * ui;
                    }
                }

                if shared.mask.output {
                    model.output.axpy_row(ctx as usize, -eta * g_pos, &x);
                    for (i, &neg) in neg_ids.iter().enumerate() {
                        model.output.axpy_row(neg as usize, -eta * g_negs[i], &x);
                    }
                }
                if shared.mask.base {
                    model.base.axpy_row(base_row, -eta, &gx);
                }
                if shared.mask.temporal {
                    if let Some(r) = temporal_row {
                        model.temporal.data.axpy_row(r, -eta, &gx);
                        model.temporal.data.scale_row(r, shrink_t);
                    }
                }
                if shared.mask.community {
                    if let Some(r) = community_row {
                        model.community.data.axpy_row(r, -eta, &gx);
                        model.community.data.scale_row(r, shrink_s);
                    }
                }
                pair_count += 1;
            }
        }
    }
    (loss_sum, pair_count)
}
