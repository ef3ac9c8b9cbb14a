//! Synthetic corpora with planted communities, semantic changes, and
//! lead-lag delays.
//!
//! Documents are unigram draws from per-(bin, community) topic mixtures: each
//! document picks one topic from its community's mixture and samples tokens
//! from that topic's word distribution. A planted change term is injected
//! into documents of its old topic before the community's onset bin and into
//! documents of its new topic afterwards, so its context flips topics at the
//! onset. Interaction graphs use dense intra-community and sparse
//! inter-community edges. The ground-truth ledger drives recovery scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::changes::ChangeCandidate;
use crate::corpus::{Document, TimeBin};
use crate::graphcluster::{InteractionKind, InteractionRecord, SeedCommunity};
use crate::leadership::LeadershipNetwork;

const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec:\n{}", .0.join("\n"))]
    InvalidSpec(Vec<String>),
    #[error("outputs were produced under seed {output} but the ledger holds seed {ledger}")]
    SeedMismatch { output: u64, ledger: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthCommunity {
    pub label: String,
    /// Mixture weights over topics; need not be normalized.
    pub topic_mixture: Vec<f64>,
}

/// A term whose context flips from `old_topic` to `new_topic` at each
/// community's onset bin. Communities absent from `onsets` never adopt the
/// new meaning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedChange {
    pub term: String,
    pub old_topic: usize,
    pub new_topic: usize,
    pub onsets: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLead {
    pub leader: String,
    pub follower: String,
    /// Follower onset minus leader onset, in bins.
    pub delay: usize,
}

/// Two terms injected into the same topic's documents, giving them
/// near-identical context distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynonymPair {
    pub a: String,
    pub b: String,
    pub topic: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of regular topic words (named `w000`, `w001`, ...).
    pub vocab_size: usize,
    pub topics: usize,
    pub bins: usize,
    pub bin_days: i64,
    /// Corpus start, in days since the epoch.
    pub start_day: i64,
    pub communities: Vec<SynthCommunity>,
    pub docs_per_bin_per_community: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub planted_changes: Vec<PlantedChange>,
    pub planted_leads: Vec<PlantedLead>,
    pub synonym_pairs: Vec<SynonymPair>,
    pub users_per_community: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    /// Fraction of a document's positions replaced by an applicable planted
    /// term.
    pub insert_rate: f64,
    /// Fraction of documents landing on their bin's first day (bins after
    /// the first), producing the volume spikes the binning stage detects.
    pub spike_share: f64,
    /// Number of stable terms listed in the ledger as controls.
    pub control_terms: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 120,
            topics: 3,
            bins: 3,
            bin_days: 40,
            start_day: 18_000,
            communities: vec![
                SynthCommunity { label: "red".to_string(), topic_mixture: vec![1.0, 1.0, 1.0] },
                SynthCommunity { label: "blue".to_string(), topic_mixture: vec![1.0, 1.0, 1.0] },
            ],
            docs_per_bin_per_community: 150,
            doc_len_min: 12,
            doc_len_max: 24,
            planted_changes: Vec::new(),
            planted_leads: Vec::new(),
            synonym_pairs: Vec::new(),
            users_per_community: 100,
            intra_edge_prob: 0.1,
            inter_edge_prob: 0.001,
            insert_rate: 0.08,
            spike_share: 0.2,
            control_terms: 20,
            seed: 7,
        }
    }
}

/// What was planted, for recovery scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub user_communities: BTreeMap<String, String>,
    pub changes: Vec<PlantedChangeTruth>,
    pub leads: Vec<PlantedLead>,
    pub control_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedChangeTruth {
    pub term: String,
    pub old_topic: usize,
    pub new_topic: usize,
    pub onsets: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub documents: Vec<Document>,
    pub interactions: Vec<InteractionRecord>,
    pub bins: Vec<TimeBin>,
    pub truth: GroundTruth,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut violations = Vec::new();
        if self.topics == 0 {
            violations.push("topics must be at least 1".to_string());
        }
        if self.vocab_size < self.topics {
            violations.push(format!(
                "vocab_size {} smaller than topic count {}",
                self.vocab_size, self.topics
            ));
        }
        if self.bins == 0 {
            violations.push("bins must be at least 1".to_string());
        }
        if self.bin_days < 2 {
            violations.push("bin_days must be at least 2".to_string());
        }
        if self.communities.is_empty() {
            violations.push("at least one community required".to_string());
        }
        if self.doc_len_min < 2 || self.doc_len_max < self.doc_len_min {
            violations.push("document length range must satisfy 2 <= min <= max".to_string());
        }
        for p in [self.intra_edge_prob, self.inter_edge_prob, self.insert_rate, self.spike_share] {
            if !(0.0..=1.0).contains(&p) {
                violations.push(format!("probability {p} outside [0, 1]"));
            }
        }
        let labels: BTreeSet<&str> = self.communities.iter().map(|c| c.label.as_str()).collect();
        if labels.len() != self.communities.len() {
            violations.push("community labels must be unique".to_string());
        }
        for c in &self.communities {
            if c.topic_mixture.len() != self.topics {
                violations.push(format!(
                    "community {} mixture has {} weights for {} topics",
                    c.label,
                    c.topic_mixture.len(),
                    self.topics
                ));
            }
            if c.topic_mixture.iter().any(|&w| w < 0.0) || c.topic_mixture.iter().sum::<f64>() <= 0.0 {
                violations.push(format!("community {} mixture must be non-negative and non-zero", c.label));
            }
        }
        let mut planted_names = BTreeSet::new();
        for pc in &self.planted_changes {
            if !planted_names.insert(pc.term.as_str()) {
                violations.push(format!("planted term {} repeated", pc.term));
            }
            if pc.old_topic >= self.topics || pc.new_topic >= self.topics {
                violations.push(format!("planted change {} references a missing topic", pc.term));
            }
            if pc.old_topic == pc.new_topic {
                violations.push(format!("planted change {} does not change topics", pc.term));
            }
            for (community, &onset) in &pc.onsets {
                if !labels.contains(community.as_str()) {
                    violations.push(format!(
                        "planted change {} onset names unknown community {community}",
                        pc.term
                    ));
                }
                if onset >= self.bins {
                    violations.push(format!(
                        "planted change {} onset bin {onset} out of range",
                        pc.term
                    ));
                }
            }
        }
        for sp in &self.synonym_pairs {
            for name in [&sp.a, &sp.b] {
                if !planted_names.insert(name.as_str()) {
                    violations.push(format!("synonym term {name} repeated"));
                }
            }
            if sp.topic >= self.topics {
                violations.push(format!("synonym pair {}/{} references a missing topic", sp.a, sp.b));
            }
        }
        for lead in &self.planted_leads {
            if lead.leader == lead.follower {
                violations.push(format!("lead pair {}->{} is a self-pair", lead.leader, lead.follower));
            }
            for community in [&lead.leader, &lead.follower] {
                if !labels.contains(community.as_str()) {
                    violations.push(format!("lead pair names unknown community {community}"));
                }
            }
            for pc in &self.planted_changes {
                if let (Some(&lo), Some(&fo)) =
                    (pc.onsets.get(&lead.leader), pc.onsets.get(&lead.follower))
                {
                    if lo > fo {
                        violations.push(format!(
                            "change {}: leader {} onset {lo} after follower {} onset {fo}",
                            pc.term, lead.leader, lead.follower
                        ));
                    }
                    if fo - lo != lead.delay {
                        violations.push(format!(
                            "change {}: onset gap {} does not match declared delay {}",
                            pc.term,
                            fo - lo,
                            lead.delay
                        ));
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(violations))
        }
    }

    /// Planted time bins: `bins` consecutive spans of `bin_days` days.
    pub fn planted_bins(&self) -> Vec<TimeBin> {
        (0..self.bins)
            .map(|b| {
                TimeBin::from_days(
                    b,
                    self.start_day + b as i64 * self.bin_days,
                    self.start_day + (b as i64 + 1) * self.bin_days - 1,
                )
            })
            .collect()
    }

    /// The first `per_community` users of each community, as seed sets for
    /// clustering.
    pub fn seed_communities(&self, per_community: usize) -> Vec<SeedCommunity> {
        self.communities
            .iter()
            .map(|c| SeedCommunity {
                name: c.label.clone(),
                users: (0..per_community.min(self.users_per_community))
                    .map(|i| format!("u_{}_{i:03}", c.label))
                    .collect(),
            })
            .collect()
    }
}

/// Generate documents, interaction records, and the ground-truth ledger.
/// Bit-identical output under a fixed seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bins = spec.planted_bins();

    // Topic word blocks with mildly skewed within-topic weights.
    let words: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i:03}")).collect();
    let mut topic_words: Vec<Vec<usize>> = vec![Vec::new(); spec.topics];
    for (i, _) in words.iter().enumerate() {
        topic_words[i % spec.topics].push(i);
    }
    let topic_dists: Vec<WeightedIndex<f64>> = topic_words
        .iter()
        .map(|block| {
            WeightedIndex::new(block.iter().enumerate().map(|(rank, _)| 1.0 / (1.0 + rank as f64)))
                .expect("non-empty topic block")
        })
        .collect();
    let mixtures: Vec<WeightedIndex<f64>> = spec
        .communities
        .iter()
        .map(|c| WeightedIndex::new(c.topic_mixture.iter().copied()).expect("validated mixture"))
        .collect();

    let users: Vec<Vec<String>> = spec
        .communities
        .iter()
        .map(|c| {
            (0..spec.users_per_community).map(|i| format!("u_{}_{i:03}", c.label)).collect()
        })
        .collect();

    let mut documents = Vec::new();
    let mut doc_counter = 0usize;
    for (bin_idx, bin) in bins.iter().enumerate() {
        for (ci, community) in spec.communities.iter().enumerate() {
            for _ in 0..spec.docs_per_bin_per_community {
                let day = if bin_idx > 0 && rng.gen::<f64>() < spec.spike_share {
                    bin.start_day()
                } else {
                    rng.gen_range(bin.start_day()..=bin.end_day())
                };
                let timestamp = day * SECS_PER_DAY + rng.gen_range(0..SECS_PER_DAY);
                let topic = mixtures[ci].sample(&mut rng);
                let len = rng.gen_range(spec.doc_len_min..=spec.doc_len_max);
                let mut tokens: Vec<String> = (0..len)
                    .map(|_| {
                        let w = topic_words[topic][topic_dists[topic].sample(&mut rng)];
                        words[w].clone()
                    })
                    .collect();

                // Planted terms replace positions in documents whose topic
                // matches their current (per community, per bin) context.
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(&mut rng);
                let mut cursor = 0;
                let mut inject = |term: &str, count: usize, tokens: &mut Vec<String>| {
                    for _ in 0..count {
                        if cursor >= positions.len() {
                            break;
                        }
                        tokens[positions[cursor]] = term.to_string();
                        cursor += 1;
                    }
                };
                let n_ins = ((len as f64 * spec.insert_rate).round() as usize).max(1);
                for pc in &spec.planted_changes {
                    let effective = match pc.onsets.get(&community.label) {
                        Some(&onset) if bin_idx >= onset => pc.new_topic,
                        _ => pc.old_topic,
                    };
                    if topic == effective {
                        inject(&pc.term, n_ins, &mut tokens);
                    }
                }
                for sp in &spec.synonym_pairs {
                    if topic == sp.topic {
                        inject(&sp.a, n_ins, &mut tokens);
                        inject(&sp.b, n_ins, &mut tokens);
                    }
                }

                let author = users[ci][rng.gen_range(0..users[ci].len())].clone();
                documents.push(Document {
                    id: format!("d{doc_counter:06}"),
                    timestamp,
                    author,
                    community: Some(community.label.clone()),
                    tokens,
                    is_retweet: false,
                });
                doc_counter += 1;
            }
        }
    }

    // Interaction records: dense within communities, sparse across.
    let mut interactions = Vec::new();
    let flat_users: Vec<(usize, &String)> = users
        .iter()
        .enumerate()
        .flat_map(|(ci, us)| us.iter().map(move |u| (ci, u)))
        .collect();
    let kinds = [InteractionKind::Reply, InteractionKind::Mention, InteractionKind::Retweet];
    for bin in &bins {
        for i in 0..flat_users.len() {
            for j in i + 1..flat_users.len() {
                let (ci, ui) = flat_users[i];
                let (cj, uj) = flat_users[j];
                let p = if ci == cj { spec.intra_edge_prob } else { spec.inter_edge_prob };
                if rng.gen::<f64>() >= p {
                    continue;
                }
                let day = rng.gen_range(bin.start_day()..=bin.end_day());
                let timestamp = day * SECS_PER_DAY + rng.gen_range(0..SECS_PER_DAY);
                let (src, dst) =
                    if rng.gen::<bool>() { (ui.clone(), uj.clone()) } else { (uj.clone(), ui.clone()) };
                interactions.push(InteractionRecord {
                    src,
                    dst,
                    kind: kinds[rng.gen_range(0..kinds.len())],
                    timestamp,
                });
            }
        }
    }

    // Controls: frequent regular words untouched by any planted mechanism.
    let control_terms: Vec<String> = {
        let mut picked = Vec::new();
        let mut rank = 0;
        while picked.len() < spec.control_terms && rank < spec.vocab_size {
            for block in &topic_words {
                if let Some(&w) = block.get(rank / spec.topics.max(1)) {
                    if picked.len() < spec.control_terms {
                        picked.push(words[w].clone());
                    }
                }
            }
            rank += spec.topics;
        }
        picked.sort();
        picked.dedup();
        picked.truncate(spec.control_terms);
        picked
    };

    let mut user_communities = BTreeMap::new();
    for (ci, us) in users.iter().enumerate() {
        for u in us {
            user_communities.insert(u.clone(), spec.communities[ci].label.clone());
        }
    }
    let truth = GroundTruth {
        seed: spec.seed,
        user_communities,
        changes: spec
            .planted_changes
            .iter()
            .map(|pc| PlantedChangeTruth {
                term: pc.term.clone(),
                old_topic: pc.old_topic,
                new_topic: pc.new_topic,
                onsets: pc.onsets.clone(),
            })
            .collect(),
        leads: spec.planted_leads.clone(),
        control_terms,
    };

    Ok(SynthOutput { documents, interactions, bins, truth })
}

/// Recovery metrics for a pipeline run against the ledger it was seeded from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Fraction of planted terms appearing within the top `m` ranked changes.
    pub recall_at_m: f64,
    /// 1-based rank of each planted term's first ranked triple, if any.
    pub planted_ranks: BTreeMap<String, Option<usize>>,
    /// Fraction of planted lead edges present in the network.
    pub planted_edge_recovery: Option<f64>,
    /// Fraction of emitted edges that were not planted.
    pub false_edge_rate: Option<f64>,
    /// Size-weighted majority-community share over chains.
    pub chain_purity: Option<f64>,
}

pub struct RecoveryInputs<'a> {
    pub seed: u64,
    pub ranked_changes: &'a [ChangeCandidate],
    pub network: Option<&'a LeadershipNetwork>,
    /// Member users per chain, when chain purity should be scored.
    pub chain_members: Option<&'a [Vec<String>]>,
}

pub fn score_recovery(
    inputs: &RecoveryInputs,
    truth: &GroundTruth,
    m: usize,
) -> Result<RecoveryReport, SynthError> {
    if inputs.seed != truth.seed {
        return Err(SynthError::SeedMismatch { output: inputs.seed, ledger: truth.seed });
    }

    let mut planted_ranks = BTreeMap::new();
    for change in &truth.changes {
        let rank = inputs
            .ranked_changes
            .iter()
            .position(|c| c.term == change.term)
            .map(|i| i + 1);
        planted_ranks.insert(change.term.clone(), rank);
    }
    let recalled = planted_ranks.values().filter(|r| matches!(r, Some(rank) if *rank <= m)).count();
    let recall_at_m = if truth.changes.is_empty() {
        1.0
    } else {
        recalled as f64 / truth.changes.len() as f64
    };

    let (planted_edge_recovery, false_edge_rate) = match inputs.network {
        None => (None, None),
        Some(network) => {
            let planted: BTreeSet<(String, String)> = truth
                .leads
                .iter()
                .map(|l| (l.leader.clone(), l.follower.clone()))
                .collect();
            let recovery = if planted.is_empty() {
                1.0
            } else {
                planted.iter().filter(|key| network.edges.contains_key(*key)).count() as f64
                    / planted.len() as f64
            };
            let emitted = network.edges.len();
            let false_rate = if emitted == 0 {
                0.0
            } else {
                network.edges.keys().filter(|key| !planted.contains(*key)).count() as f64
                    / emitted as f64
            };
            (Some(recovery), Some(false_rate))
        }
    };

    let chain_purity = inputs.chain_members.map(|chains| {
        let mut weighted = 0.0;
        let mut total = 0usize;
        for members in chains {
            if members.is_empty() {
                continue;
            }
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for user in members {
                if let Some(label) = truth.user_communities.get(user) {
                    *counts.entry(label).or_insert(0) += 1;
                }
            }
            let majority = counts.values().copied().max().unwrap_or(0);
            weighted += majority as f64;
            total += members.len();
        }
        if total == 0 {
            0.0
        } else {
            weighted / total as f64
        }
    });

    Ok(RecoveryReport {
        recall_at_m,
        planted_ranks,
        planted_edge_recovery,
        false_edge_rate,
        chain_purity,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(pairs: &[(u32, u32)]) -> f64 {
    let mut contingency: HashMap<(u32, u32), u64> = HashMap::new();
    let mut row: HashMap<u32, u64> = HashMap::new();
    let mut col: HashMap<u32, u64> = HashMap::new();
    for &(a, b) in pairs {
        *contingency.entry((a, b)).or_insert(0) += 1;
        *row.entry(a).or_insert(0) += 1;
        *col.entry(b).or_insert(0) += 1;
    }
    let choose2 = |n: u64| -> f64 { (n * n.saturating_sub(1)) as f64 / 2.0 };
    let sum_ij: f64 = contingency.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = row.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = col.values().map(|&n| choose2(n)).sum();
    let total = choose2(pairs.len() as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max_index = (sum_a + sum_b) / 2.0;
    if (max_index - expected).abs() < 1e-12 {
        1.0
    } else {
        (sum_ij - expected) / (max_index - expected)
    }
}
