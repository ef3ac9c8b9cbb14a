//! Community detection, temporal word embeddings, and semantic leadership
//! networks for timestamped interaction corpora.
//!
//! The pipeline runs in six stages over a corpus of timestamped,
//! author-attributed documents and a log of user-to-user interactions:
//!
//! 1. [`binning`] — partition the corpus timeline at local maxima of daily
//!    document frequency, producing irregular time bins.
//! 2. [`graphcluster`] — build per-bin user interaction graphs and partition
//!    users with seeded Louvain modularity maximization.
//! 3. [`matching`] — link clusters across successive bins into persistent
//!    community chains via in-degree-weighted Jaccard similarity.
//! 4. [`embeddings`] — train skipgram embeddings with negative sampling where
//!    each input embedding decomposes into a base vector plus temporal and
//!    community-temporal residuals.
//! 5. [`changes`] — rank semantic-change triples `(term, t1, t2)` by temporal
//!    near-neighbor divergence.
//! 6. [`leadership`] — score lead-lag relationships per change, filter them
//!    against randomized datasets, and aggregate the survivors into a weighted
//!    directed leadership network between communities.
//!
//! [`corpus`] handles ingestion and vocabulary bookkeeping, [`synthgen`]
//! generates synthetic corpora with planted ground truth for validation, and
//! [`pipeline`] orchestrates all stages with content-hashed artifact manifests.

pub mod binning;
pub mod changes;
pub mod corpus;
pub mod embeddings;
pub mod graphcluster;
pub mod leadership;
pub mod matching;
pub mod pipeline;
pub mod synthgen;

pub use corpus::{Document, TimeBin, Vocabulary};
