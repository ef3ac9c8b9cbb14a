//! Lead-lag scoring, randomization filtering, and leadership networks.
//!
//! For a change `(w, t1, t2)` and an ordered community pair `(s1, s2)` the
//! lead score is the ratio of cross-community to within-community meaning
//! correlation, `(x_w^{(t1,s1)} · x_w^{(t2,s2)}) / (x_w^{(t1,s2)} ·
//! x_w^{(t2,s2)})`; a score of 1 means no leadership. Observed scores are
//! kept only when they exceed the 95th percentile of the same event's scores
//! under K randomized datasets, built by pooling and reshuffling tokens
//! within each bin so that community-specific context statistics are
//! destroyed while every marginal count survives.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changes::ChangeCandidate;
use crate::embeddings::{EmbeddingError, EmbeddingModel, TrainConfig, TrainDocument};

#[derive(Debug, thiserror::Error)]
pub enum LeadershipError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("denominator below 1e-12 for event {0}; score undefined")]
    DegenerateDenominator(String),
    #[error("randomization count {0} too small; need at least 20")]
    TooFewRandomizations(usize),
    #[error("event has non-finite lead score")]
    NonFiniteScore,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const DENOMINATOR_GUARD: f64 = 1e-12;

/// A change adopted by `follower` after `leader`, with its lead score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadershipEvent {
    pub leader: String,
    pub follower: String,
    pub term: String,
    pub t1: usize,
    pub t2: usize,
    pub score: f64,
}

/// Weighted directed graph over community labels; edge weight is the number
/// of significant events from leader to follower.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LeadershipNetwork {
    pub communities: Vec<String>,
    /// (leader, follower) → events; weight is the event count.
    pub edges: BTreeMap<(String, String), Vec<LeadershipEvent>>,
}

impl LeadershipNetwork {
    pub fn weight(&self, leader: &str, follower: &str) -> usize {
        self.edges
            .get(&(leader.to_string(), follower.to_string()))
            .map_or(0, Vec::len)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Tallies from network induction.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NetworkStats {
    pub evaluated_events: usize,
    pub passed_events: usize,
    pub dropped_events: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of randomized datasets.
    pub k_random: usize,
    pub seed: u64,
    /// Epochs for the per-randomization community-residual retraining.
    pub retrain_epochs: usize,
    /// Retrain every parameter class on each randomized dataset instead of
    /// only the community residuals.
    pub full_retrain: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { k_random: 100, seed: 7, retrain_epochs: 5, full_retrain: false }
    }
}

/// Lead score of Eq-form `(x^{(t1,s1)}·x^{(t2,s2)}) / (x^{(t1,s2)}·x^{(t2,s2)})`
/// on full community-specialized input embeddings.
pub fn lead_score(
    model: &EmbeddingModel,
    s1: &str,
    s2: &str,
    term: &str,
    t1: usize,
    t2: usize,
) -> Result<f64, LeadershipError> {
    let x_t1_s1 = model.input_embedding(term, t1, Some(s1))?;
    let x_t1_s2 = model.input_embedding(term, t1, Some(s2))?;
    let x_t2_s2 = model.input_embedding(term, t2, Some(s2))?;
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let numerator = dot(&x_t1_s1, &x_t2_s2);
    let denominator = dot(&x_t1_s2, &x_t2_s2);
    if denominator.abs() < DENOMINATOR_GUARD {
        return Err(LeadershipError::DegenerateDenominator(format!(
            "{s1}->{s2} {term} ({t1},{t2})"
        )));
    }
    Ok(numerator / denominator)
}

/// Pool all tokens within each bin and deal them back to the original
/// document slots uniformly at random. Document count, every document's
/// length, bin, and community label are preserved exactly, and so are
/// per-bin term frequencies.
pub fn randomize(docs: &[TrainDocument], rng: &mut ChaCha8Rng) -> Vec<TrainDocument> {
    let mut by_bin: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, doc) in docs.iter().enumerate() {
        by_bin.entry(doc.bin).or_default().push(i);
    }
    let mut out: Vec<TrainDocument> = docs.to_vec();
    for (_, members) in by_bin {
        let mut pool: Vec<u32> = Vec::new();
        for &i in &members {
            pool.extend_from_slice(&docs[i].tokens);
        }
        pool.shuffle(rng);
        let mut cursor = 0;
        for &i in &members {
            let len = docs[i].tokens.len();
            out[i].tokens.clear();
            out[i].tokens.extend_from_slice(&pool[cursor..cursor + len]);
            cursor += len;
        }
    }
    out
}

/// Nearest-rank 95th percentile: `sorted[ceil(0.95 K) - 1]`. An event passes
/// only when the observed score strictly exceeds it.
pub fn significance_filter(observed: f64, randomized: &[f64]) -> Result<bool, LeadershipError> {
    let k = randomized.len();
    if k < 20 {
        return Err(LeadershipError::TooFewRandomizations(k));
    }
    let mut sorted = randomized.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = (0.95 * k as f64).ceil() as usize;
    let percentile = sorted[rank - 1];
    Ok(observed > percentile)
}

/// Train the K randomized models: each randomization reshuffles tokens
/// within bins, then retrains community residuals against the frozen base,
/// temporal, and output tables (or everything, with `full_retrain`).
/// Randomizations run in parallel; results are ordered by randomization
/// index, so the outcome does not depend on scheduling.
pub fn randomized_models(
    model: &EmbeddingModel,
    docs: &[TrainDocument],
    train_config: &TrainConfig,
    config: &NetworkConfig,
) -> Result<Vec<EmbeddingModel>, LeadershipError> {
    (0..config.k_random)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                config.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(k as u64),
            );
            let shuffled = randomize(docs, &mut rng);
            let mut cfg = train_config.clone();
            cfg.seed = config.seed.wrapping_add(k as u64).wrapping_mul(0x2545f4914f6cdd1d);
            cfg.threads = 1;
            if config.full_retrain {
                let mut fresh = EmbeddingModel::init(
                    model.vocab().clone(),
                    model.bins(),
                    model.communities().to_vec(),
                    &shuffled,
                    &cfg,
                )?;
                fresh.train(&shuffled, &cfg)?;
                Ok(fresh)
            } else {
                Ok(model.retrain_community_residuals(&shuffled, &cfg, config.retrain_epochs)?)
            }
        })
        .collect()
}

/// Score every (change, ordered community pair) event against the randomized
/// models and aggregate passing events into a leadership network. Events
/// whose denominator degenerates under any model are dropped and logged.
pub fn induce_network(
    changes: &[ChangeCandidate],
    model: &EmbeddingModel,
    randomized: &[EmbeddingModel],
    communities: &[String],
) -> Result<(LeadershipNetwork, NetworkStats), LeadershipError> {
    if randomized.len() < 20 {
        return Err(LeadershipError::TooFewRandomizations(randomized.len()));
    }
    let mut network = LeadershipNetwork {
        communities: communities.to_vec(),
        edges: BTreeMap::new(),
    };
    let mut stats = NetworkStats::default();

    for change in changes {
        for s1 in communities {
            for s2 in communities {
                if s1 == s2 {
                    continue;
                }
                stats.evaluated_events += 1;
                let observed =
                    match lead_score(model, s1, s2, &change.term, change.t1, change.t2) {
                        Ok(score) if score.is_finite() => score,
                        Ok(_) | Err(LeadershipError::DegenerateDenominator(_)) => {
                            log::warn!(
                                "dropping event {s1}->{s2} {} ({},{}): undefined observed score",
                                change.term,
                                change.t1,
                                change.t2
                            );
                            stats.dropped_events += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                let mut null_scores = Vec::with_capacity(randomized.len());
                let mut dropped = false;
                for m in randomized {
                    match lead_score(m, s1, s2, &change.term, change.t1, change.t2) {
                        Ok(score) if score.is_finite() => null_scores.push(score),
                        Ok(_) | Err(LeadershipError::DegenerateDenominator(_)) => {
                            log::warn!(
                                "dropping event {s1}->{s2} {} ({},{}): undefined randomized score",
                                change.term,
                                change.t1,
                                change.t2
                            );
                            dropped = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if dropped {
                    stats.dropped_events += 1;
                    continue;
                }
                // Passing events must also satisfy the event invariants:
                // finite positive score.
                if significance_filter(observed, &null_scores)? && observed > 0.0 {
                    stats.passed_events += 1;
                    network
                        .edges
                        .entry((s1.clone(), s2.clone()))
                        .or_default()
                        .push(LeadershipEvent {
                            leader: s1.clone(),
                            follower: s2.clone(),
                            term: change.term.clone(),
                            t1: change.t1,
                            t2: change.t2,
                            score: observed,
                        });
                }
            }
        }
    }
    Ok((network, stats))
}

/// Edge-list CSV: `leader,follower,weight`, sorted by key.
pub fn write_network_csv<W: Write>(network: &LeadershipNetwork, mut w: W) -> Result<(), LeadershipError> {
    let mut writer = csv::Writer::from_writer(&mut w);
    writer
        .write_record(["leader", "follower", "weight"])
        .map_err(|e| LeadershipError::Io(std::io::Error::other(e)))?;
    for ((leader, follower), events) in &network.edges {
        writer
            .write_record([leader.as_str(), follower.as_str(), &events.len().to_string()])
            .map_err(|e| LeadershipError::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}

/// JSON export with the full per-edge event ledger.
pub fn write_network_json<W: Write>(network: &LeadershipNetwork, w: W) -> Result<(), LeadershipError> {
    #[derive(Serialize)]
    struct EdgeOut<'a> {
        leader: &'a str,
        follower: &'a str,
        weight: usize,
        events: &'a [LeadershipEvent],
    }
    #[derive(Serialize)]
    struct NetworkOut<'a> {
        communities: &'a [String],
        edges: Vec<EdgeOut<'a>>,
    }
    let out = NetworkOut {
        communities: &network.communities,
        edges: network
            .edges
            .iter()
            .map(|((leader, follower), events)| EdgeOut {
                leader,
                follower,
                weight: events.len(),
                events,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(w, &out).map_err(|e| LeadershipError::Io(std::io::Error::other(e)))
}

/// DOT digraph with edge weights as labels and pen widths.
pub fn write_network_dot<W: Write>(network: &LeadershipNetwork, mut w: W) -> Result<(), LeadershipError> {
    writeln!(w, "digraph leadership {{")?;
    writeln!(w, "  rankdir=LR;")?;
    for community in &network.communities {
        writeln!(w, "  \"{community}\";")?;
    }
    for ((leader, follower), events) in &network.edges {
        let weight = events.len();
        writeln!(
            w,
            "  \"{leader}\" -> \"{follower}\" [label={weight}, penwidth={:.1}];",
            1.0 + (weight as f64).ln()
        )?;
    }
    writeln!(w, "}}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::embeddings::gradcheck::{set_param, Slot};
    use approx::assert_relative_eq;

    fn model_with_entries(terms: &[&str], bins: usize, communities: &[&str], dim: usize) -> EmbeddingModel {
        let vocab = Vocabulary::from_parts(
            terms.iter().map(|s| s.to_string()).collect(),
            vec![1000; terms.len()],
            vec![vec![500; bins]; terms.len()],
        );
        let mut docs = Vec::new();
        for bin in 0..bins {
            for s in 0..communities.len() {
                docs.push(TrainDocument {
                    tokens: (0..terms.len() as u32).collect(),
                    bin: bin as u16,
                    community: s as u16,
                });
            }
        }
        let config = TrainConfig { dim, min_count_bin: 1, ..TrainConfig::default() };
        EmbeddingModel::init(
            vocab,
            bins,
            communities.iter().map(|s| s.to_string()).collect(),
            &docs,
            &config,
        )
        .unwrap()
    }

    /// Zero the base and temporal parts and pin the community-specialized
    /// input embedding of `term` at (bin, community) to `v`.
    fn pin_input(model: &EmbeddingModel, term: u32, bin: u16, community: u16, v: &[f64]) {
        for (coord, &x) in v.iter().enumerate() {
            set_param(model, Slot::Base(term), coord, 0.0);
            set_param(model, Slot::Temporal(term, bin), coord, 0.0);
            set_param(model, Slot::Community(term, bin, community), coord, x);
        }
    }

    #[test]
    fn symmetric_case_scores_one() {
        let model = model_with_entries(&["w"], 2, &["s1", "s2"], 2);
        pin_input(&model, 0, 0, 0, &[0.3, 0.7]);
        pin_input(&model, 0, 0, 1, &[0.3, 0.7]);
        pin_input(&model, 0, 1, 1, &[0.9, 0.2]);
        let score = lead_score(&model, "s1", "s2", "w", 0, 1).unwrap();
        assert_relative_eq!(score, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_example_scores_two() {
        let model = model_with_entries(&["w"], 2, &["s1", "s2"], 2);
        pin_input(&model, 0, 0, 0, &[1.0, 0.0]);
        pin_input(&model, 0, 1, 1, &[1.0, 0.0]);
        pin_input(&model, 0, 0, 1, &[0.5, 0.5]);
        let score = lead_score(&model, "s1", "s2", "w", 0, 1).unwrap();
        assert_relative_eq!(score, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_denominator_is_an_error() {
        let model = model_with_entries(&["w"], 2, &["s1", "s2"], 2);
        pin_input(&model, 0, 0, 0, &[1.0, 0.0]);
        pin_input(&model, 0, 1, 1, &[0.0, 1.0]);
        pin_input(&model, 0, 0, 1, &[1.0, 0.0]); // orthogonal to x^{(t2,s2)}
        assert!(matches!(
            lead_score(&model, "s1", "s2", "w", 0, 1),
            Err(LeadershipError::DegenerateDenominator(_))
        ));
    }

    fn train_doc(tokens: &[u32], bin: u16, community: u16) -> TrainDocument {
        TrainDocument { tokens: tokens.to_vec(), bin, community }
    }

    #[test]
    fn randomize_preserves_all_marginals() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let docs: Vec<TrainDocument> = (0..200)
            .map(|i| {
                let len = rng.gen_range(1..12);
                let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..30)).collect();
                train_doc(&tokens, (i % 3) as u16, (i % 2) as u16)
            })
            .collect();
        let shuffled = randomize(&docs, &mut rng);

        assert_eq!(shuffled.len(), docs.len());
        let mut freq_before: BTreeMap<(u16, u32), u64> = BTreeMap::new();
        let mut freq_after: BTreeMap<(u16, u32), u64> = BTreeMap::new();
        let mut comm_tokens_before: BTreeMap<(u16, u16), u64> = BTreeMap::new();
        let mut comm_tokens_after: BTreeMap<(u16, u16), u64> = BTreeMap::new();
        for (a, b) in docs.iter().zip(&shuffled) {
            assert_eq!(a.tokens.len(), b.tokens.len());
            assert_eq!(a.bin, b.bin);
            assert_eq!(a.community, b.community);
            for &t in &a.tokens {
                *freq_before.entry((a.bin, t)).or_insert(0) += 1;
            }
            for &t in &b.tokens {
                *freq_after.entry((b.bin, t)).or_insert(0) += 1;
            }
            *comm_tokens_before.entry((a.bin, a.community)).or_insert(0) += a.tokens.len() as u64;
            *comm_tokens_after.entry((b.bin, b.community)).or_insert(0) += b.tokens.len() as u64;
        }
        assert_eq!(freq_before, freq_after);
        assert_eq!(comm_tokens_before, comm_tokens_after);
    }

    #[test]
    fn randomize_single_community_bin_keeps_community_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let docs = vec![train_doc(&[1, 2, 3], 0, 0), train_doc(&[4, 5], 0, 0)];
        let shuffled = randomize(&docs, &mut rng);
        let mut before: Vec<u32> = docs.iter().flat_map(|d| d.tokens.clone()).collect();
        let mut after: Vec<u32> = shuffled.iter().flat_map(|d| d.tokens.clone()).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
    }

    #[test]
    fn randomize_mixes_disjoint_vocabularies_proportionally() {
        // Community 0 writes only token 0, community 1 only token 1, with
        // community 0 holding 3/4 of the bin's tokens. After shuffling,
        // community 0's expected share of token 1 equals its token share.
        let docs = vec![
            train_doc(&[0; 30], 0, 0),
            train_doc(&[0; 30], 0, 0),
            train_doc(&[0; 30], 0, 0),
            train_doc(&[1; 30], 0, 1),
        ];
        let mut total_in_c0 = 0u64;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 1000;
        for _ in 0..trials {
            let shuffled = randomize(&docs, &mut rng);
            for d in shuffled.iter().filter(|d| d.community == 0) {
                total_in_c0 += d.tokens.iter().filter(|&&t| t == 1).count() as u64;
            }
        }
        let mean_share = total_in_c0 as f64 / trials as f64 / 30.0;
        // Expected share: community 0 holds 90 of 120 slots.
        assert!((mean_share - 0.75).abs() < 0.02, "mean share {mean_share}");
    }

    #[test]
    fn significance_filter_nearest_rank() {
        assert!(significance_filter(1.5, &vec![1.0; 100]).unwrap());
        assert!(!significance_filter(1.0, &vec![1.0; 100]).unwrap());
        let ladder: Vec<f64> = (1..=100).map(|i| 0.01 * i as f64).collect();
        assert!(significance_filter(0.96, &ladder).unwrap());
        assert!(!significance_filter(0.94, &ladder).unwrap());
        assert!(!significance_filter(0.95, &ladder).unwrap());
        assert!(matches!(
            significance_filter(1.0, &[0.5; 19]),
            Err(LeadershipError::TooFewRandomizations(19))
        ));
    }

    #[test]
    fn network_weights_match_event_counts() {
        let network = LeadershipNetwork {
            communities: vec!["a".into(), "b".into()],
            edges: [(
                ("a".to_string(), "b".to_string()),
                vec![
                    LeadershipEvent {
                        leader: "a".into(),
                        follower: "b".into(),
                        term: "w".into(),
                        t1: 0,
                        t2: 1,
                        score: 1.4,
                    },
                    LeadershipEvent {
                        leader: "a".into(),
                        follower: "b".into(),
                        term: "v".into(),
                        t1: 0,
                        t2: 2,
                        score: 1.2,
                    },
                ],
            )]
            .into_iter()
            .collect(),
        };
        assert_eq!(network.weight("a", "b"), 2);
        assert_eq!(network.weight("b", "a"), 0);

        let mut csv_out = Vec::new();
        write_network_csv(&network, &mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert!(text.contains("a,b,2"));

        let mut dot = Vec::new();
        write_network_dot(&network, &mut dot).unwrap();
        assert!(String::from_utf8(dot).unwrap().contains("\"a\" -> \"b\""));
    }
}
