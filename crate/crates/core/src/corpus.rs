//! Corpus ingestion, normalization, deduplication, and vocabulary building.
//!
//! Documents arrive as one JSON object per line with fields `id`, `timestamp`
//! (ISO-8601 or epoch seconds), `author`, optional `community`, `text` or
//! `tokens`, and an optional `is_retweet` flag. Ingestion normalizes raw text
//! into tokens; records that already carry `tokens` pass through untouched,
//! which makes `ingest ∘ write_documents` a lossless round trip.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

const SECS_PER_DAY: i64 = 86_400;

/// Errors raised while reading or assembling a corpus.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("document file contains no records")]
    EmptyFile,
    #[error("corpus is empty after filtering; cannot build a vocabulary")]
    EmptyCorpus,
    #[error("document {id} at timestamp {timestamp} falls outside every time bin")]
    UnbinnedDocument { id: String, timestamp: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One tokenized text with a timestamp and, once assigned, a community label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub author: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub community: Option<String>,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_retweet: bool,
}

/// A half-open-free time interval: both `start` and `end` are inclusive epoch
/// seconds. Bins are day-aligned, disjoint, contiguous, and cover the corpus
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBin {
    pub index: usize,
    pub start: i64,
    pub end: i64,
}

impl TimeBin {
    /// Build a bin from inclusive day numbers (days since the Unix epoch).
    pub fn from_days(index: usize, start_day: i64, end_day: i64) -> Self {
        TimeBin {
            index,
            start: start_day * SECS_PER_DAY,
            end: (end_day + 1) * SECS_PER_DAY - 1,
        }
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        timestamp >= self.start && timestamp <= self.end
    }

    pub fn start_day(&self) -> i64 {
        self.start.div_euclid(SECS_PER_DAY)
    }

    pub fn end_day(&self) -> i64 {
        self.end.div_euclid(SECS_PER_DAY)
    }

    pub fn start_date(&self) -> chrono::NaiveDate {
        day_to_date(self.start_day())
    }

    pub fn end_date(&self) -> chrono::NaiveDate {
        day_to_date(self.end_day())
    }
}

/// Locate the bin containing `timestamp`, if any. Bins are sorted by start.
pub fn bin_of(bins: &[TimeBin], timestamp: i64) -> Option<usize> {
    bins.iter().find(|b| b.contains(timestamp)).map(|b| b.index)
}

pub fn day_of_timestamp(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECS_PER_DAY)
}

pub fn day_to_date(day: i64) -> chrono::NaiveDate {
    chrono::DateTime::from_timestamp(day * SECS_PER_DAY, 0)
        .expect("day number out of chrono range")
        .date_naive()
}

pub fn date_to_day(date: chrono::NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight always exists")
        .and_utc()
        .timestamp()
        / SECS_PER_DAY
}

/// Term bookkeeping: dense indices, total counts, and per-bin counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    totals: Vec<u64>,
    /// `bin_counts[term][bin]`.
    bin_counts: Vec<Vec<u64>>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.bin_counts.first().map_or(0, Vec::len)
    }

    pub fn term(&self, index: u32) -> &str {
        &self.terms[index as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn total_count(&self, index: u32) -> u64 {
        self.totals[index as usize]
    }

    pub fn bin_count(&self, index: u32, bin: usize) -> u64 {
        self.bin_counts[index as usize][bin]
    }

    pub fn total_tokens(&self) -> u64 {
        self.totals.iter().sum()
    }

    /// Rebuild the term→index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub(crate) fn from_parts(terms: Vec<String>, totals: Vec<u64>, bin_counts: Vec<Vec<u64>>) -> Self {
        let mut v = Vocabulary { terms, index: HashMap::new(), totals, bin_counts };
        v.rebuild_index();
        v
    }
}

/// Tunables for ingestion and vocabulary construction.
#[derive(Clone)]
pub struct CorpusConfig {
    /// Terms with total count below this are excluded from the vocabulary.
    pub min_count: u64,
    /// Remove retweets and exact token-sequence duplicates after ingestion.
    pub dedup: bool,
    /// Inclusive timestamp range; records outside are dropped.
    pub range: Option<(i64, i64)>,
    /// Language (or other) filter over the raw record text; `None` passes all.
    pub filter: Option<Arc<dyn Fn(&str) -> bool + Send + Sync>>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { min_count: 25, dedup: true, range: None, filter: None }
    }
}

impl fmt::Debug for CorpusConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorpusConfig")
            .field("min_count", &self.min_count)
            .field("dedup", &self.dedup)
            .field("range", &self.range)
            .field("filter", &self.filter.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    timestamp: RawTimestamp,
    author: String,
    #[serde(default)]
    community: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    is_retweet: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTimestamp {
    Epoch(i64),
    Text(String),
}

fn parse_timestamp(raw: &RawTimestamp) -> Result<i64, String> {
    match raw {
        RawTimestamp::Epoch(secs) => Ok(*secs),
        RawTimestamp::Text(s) => {
            if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
                return Ok(dt.timestamp());
            }
            if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
                return Ok(dt.and_utc().timestamp());
            }
            if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
                return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
            }
            Err(format!("unrecognized timestamp {s:?}"))
        }
    }
}

/// Normalize one raw text into tokens: NFC, lowercase, URLs stripped,
/// `@mentions` collapsed to a `<user>` placeholder, `#hashtags` kept as
/// single tokens, everything else reduced to its alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut out = Vec::new();
    for raw in normalized.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
        {
            continue;
        }
        if let Some(rest) = lower.strip_prefix('@') {
            if rest.chars().any(|c| c.is_alphanumeric()) {
                out.push("<user>".to_string());
            }
            continue;
        }
        if let Some(rest) = lower.strip_prefix('#') {
            let body: String = rest.chars().filter(|c| c.is_alphanumeric()).collect();
            if !body.is_empty() {
                out.push(format!("#{body}"));
            }
            continue;
        }
        let body: String = lower.chars().filter(|c| c.is_alphanumeric()).collect();
        if !body.is_empty() {
            out.push(body);
        }
    }
    out
}

/// Read and normalize documents from a JSON-lines reader.
///
/// Records failing the configured filter predicate, falling outside the
/// configured range, or normalizing to zero tokens are dropped. A malformed
/// record aborts with its line number; a file with no records at all is an
/// error.
pub fn ingest<R: BufRead>(reader: R, config: &CorpusConfig) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut saw_record = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        saw_record = true;
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        let timestamp = parse_timestamp(&raw.timestamp)
            .map_err(|message| CorpusError::MalformedRecord { line: lineno, message })?;
        if let Some((lo, hi)) = config.range {
            if timestamp < lo || timestamp > hi {
                continue;
            }
        }
        let tokens = match (&raw.tokens, &raw.text) {
            (Some(tokens), _) => tokens.clone(),
            (None, Some(text)) => {
                if let Some(filter) = &config.filter {
                    if !filter(text) {
                        continue;
                    }
                }
                tokenize(text)
            }
            (None, None) => {
                return Err(CorpusError::MalformedRecord {
                    line: lineno,
                    message: "record has neither `text` nor `tokens`".to_string(),
                })
            }
        };
        if tokens.is_empty() {
            continue;
        }
        docs.push(Document {
            id: raw.id,
            timestamp,
            author: raw.author,
            community: raw.community,
            tokens,
            is_retweet: raw.is_retweet.unwrap_or(false),
        });
    }
    if !saw_record {
        return Err(CorpusError::EmptyFile);
    }
    Ok(docs)
}

/// Write documents in the canonical JSON-lines format read back by [`ingest`].
pub fn write_documents<W: Write>(docs: &[Document], mut writer: W) -> Result<(), CorpusError> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)
            .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Remove retweet-marked documents and exact token-sequence duplicates.
///
/// Among duplicates the earliest timestamp wins, ties broken by input order;
/// surviving documents keep their original relative order.
pub fn dedup(docs: Vec<Document>) -> Vec<Document> {
    let mut best: HashMap<&[String], usize> = HashMap::new();
    for (i, doc) in docs.iter().enumerate() {
        if doc.is_retweet {
            continue;
        }
        match best.entry(doc.tokens.as_slice()) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(i);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                if doc.timestamp < docs[*e.get()].timestamp {
                    e.insert(i);
                }
            }
        }
    }
    let mut keep = vec![false; docs.len()];
    for &i in best.values() {
        keep[i] = true;
    }
    docs.into_iter()
        .enumerate()
        .filter_map(|(i, d)| keep[i].then_some(d))
        .collect()
}

/// Count terms per bin and in total, keeping terms with total count at least
/// `min_count`. Documents are never mutated; out-of-vocabulary tokens are
/// simply skipped by downstream consumers.
pub fn build_vocabulary(
    docs: &[Document],
    bins: &[TimeBin],
    min_count: u64,
) -> Result<Vocabulary, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, (u64, Vec<u64>)> = HashMap::new();
    for doc in docs {
        let bin = bin_of(bins, doc.timestamp).ok_or_else(|| CorpusError::UnbinnedDocument {
            id: doc.id.clone(),
            timestamp: doc.timestamp,
        })?;
        for token in &doc.tokens {
            let entry = counts.entry(token).or_insert_with(|| (0, vec![0; bins.len()]));
            entry.0 += 1;
            entry.1[bin] += 1;
        }
    }
    let mut kept: Vec<(&str, u64, Vec<u64>)> = counts
        .into_iter()
        .filter(|(_, (total, _))| *total >= min_count)
        .map(|(term, (total, per_bin))| (term, total, per_bin))
        .collect();
    // Frequency-descending order, ties lexicographic: stable under reruns.
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let terms: Vec<String> = kept.iter().map(|(t, _, _)| t.to_string()).collect();
    let totals: Vec<u64> = kept.iter().map(|(_, c, _)| *c).collect();
    let bin_counts: Vec<Vec<u64>> = kept.into_iter().map(|(_, _, pb)| pb).collect();
    Ok(Vocabulary::from_parts(terms, totals, bin_counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn doc(id: &str, ts: i64, tokens: &[&str]) -> Document {
        Document {
            id: id.to_string(),
            timestamp: ts,
            author: "a".to_string(),
            community: None,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            is_retweet: false,
        }
    }

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(tokenize("Abolish the police."), vec!["abolish", "the", "police"]);
    }

    #[test]
    fn tokenize_handles_mentions_hashtags_urls() {
        assert_eq!(
            tokenize("@Someone check #BlackLivesMatter https://t.co/xyz now!"),
            vec!["<user>", "check", "#blacklivesmatter", "now"]
        );
    }

    #[test]
    fn ingest_parses_text_and_epoch() {
        let input = r#"{"id":"1","timestamp":1000,"author":"u1","text":"Abolish the police."}"#;
        let docs = ingest(Cursor::new(input), &CorpusConfig::default()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].tokens, vec!["abolish", "the", "police"]);
    }

    #[test]
    fn ingest_parses_iso_timestamps() {
        let input = r#"{"id":"1","timestamp":"2014-09-02T00:00:00Z","author":"u1","text":"hi there"}"#;
        let docs = ingest(Cursor::new(input), &CorpusConfig::default()).unwrap();
        assert_eq!(day_to_date(day_of_timestamp(docs[0].timestamp)).to_string(), "2014-09-02");
    }

    #[test]
    fn ingest_missing_timestamp_reports_line() {
        let input = "{\"id\":\"1\",\"timestamp\":5,\"author\":\"u\",\"text\":\"ok fine\"}\n{\"id\":\"2\",\"author\":\"u\",\"text\":\"broken\"}";
        let err = ingest(Cursor::new(input), &CorpusConfig::default()).unwrap_err();
        match err {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ingest_empty_file_errors() {
        let err = ingest(Cursor::new(""), &CorpusConfig::default()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyFile));
    }

    #[test]
    fn ingest_applies_filter_predicate() {
        let mut config = CorpusConfig::default();
        config.filter = Some(Arc::new(|text: &str| !text.contains("skip")));
        let input = "{\"id\":\"1\",\"timestamp\":1,\"author\":\"u\",\"text\":\"keep me\"}\n{\"id\":\"2\",\"timestamp\":2,\"author\":\"u\",\"text\":\"skip me\"}";
        let docs = ingest(Cursor::new(input), &config).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "1");
    }

    #[test]
    fn dedup_removes_exact_duplicates() {
        let docs = vec![doc("1", 10, &["a", "b"]), doc("2", 5, &["a", "b"]), doc("3", 7, &["c"])];
        let out = dedup(docs);
        assert_eq!(out.len(), 2);
        // Earliest timestamp retained for the duplicate pair.
        assert_eq!(out[0].id, "2");
        assert_eq!(out[1].id, "3");
    }

    #[test]
    fn dedup_removes_retweets() {
        let mut rt = doc("1", 1, &["a"]);
        rt.is_retweet = true;
        let out = dedup(vec![rt, doc("2", 2, &["b"])]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "2");
    }

    #[test]
    fn dedup_three_docs_two_identical() {
        let docs = vec![doc("1", 1, &["x", "y"]), doc("2", 2, &["x", "y"]), doc("3", 3, &["z"])];
        assert_eq!(dedup(docs).len(), 2);
    }

    #[test]
    fn vocabulary_min_count_filter() {
        let bins = vec![TimeBin::from_days(0, 0, 9)];
        let mut docs = Vec::new();
        for i in 0..5 {
            docs.push(doc(&format!("a{i}"), 100, &["a"]));
        }
        docs.push(doc("b0", 100, &["b"]));
        let vocab = build_vocabulary(&docs, &bins, 2).unwrap();
        assert_eq!(vocab.terms(), &["a".to_string()]);

        let all = build_vocabulary(&docs, &bins, 1).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn vocabulary_empty_corpus_errors() {
        let bins = vec![TimeBin::from_days(0, 0, 0)];
        assert!(matches!(build_vocabulary(&[], &bins, 1), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_unbinned_document_errors() {
        let bins = vec![TimeBin::from_days(0, 0, 0)];
        let docs = vec![doc("1", SECS_PER_DAY * 30, &["a"])];
        assert!(matches!(
            build_vocabulary(&docs, &bins, 1),
            Err(CorpusError::UnbinnedDocument { .. })
        ));
    }

    #[test]
    fn duplicate_within_bin_single_after_dedup_of_ingest() {
        let input = "{\"id\":\"1\",\"timestamp\":100,\"author\":\"u\",\"text\":\"same text here\"}\n{\"id\":\"2\",\"timestamp\":200,\"author\":\"v\",\"text\":\"same text here\"}";
        let docs = dedup(ingest(Cursor::new(input), &CorpusConfig::default()).unwrap());
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "1");
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vocab = ["a", "b", "c"];
            let docs: Vec<Document> = (0..30)
                .map(|i| {
                    let len = rng.gen_range(1..4);
                    let tokens: Vec<&str> =
                        (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                    let mut d = doc(&i.to_string(), rng.gen_range(0..50), &tokens);
                    d.is_retweet = rng.gen_bool(0.2);
                    d
                })
                .collect();
            let once = dedup(docs);
            let twice = dedup(once.clone());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocabulary_bin_counts_sum_to_totals(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bins = vec![TimeBin::from_days(0, 0, 4), TimeBin::from_days(1, 5, 9)];
            let vocab = ["a", "b", "c", "d"];
            let docs: Vec<Document> = (0..40)
                .map(|i| {
                    let len = rng.gen_range(1..5);
                    let tokens: Vec<&str> =
                        (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                    doc(&i.to_string(), rng.gen_range(0..10 * SECS_PER_DAY), &tokens)
                })
                .collect();
            let v = build_vocabulary(&docs, &bins, 1).unwrap();
            for t in 0..v.len() as u32 {
                let sum: u64 = (0..bins.len()).map(|b| v.bin_count(t, b)).sum();
                prop_assert_eq!(sum, v.total_count(t));
            }
        }

        #[test]
        fn ingest_write_round_trip(n in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let words = ["alpha", "beta", "#tag", "<user>", "gamma"];
            let docs: Vec<Document> = (0..n)
                .map(|i| {
                    let len = rng.gen_range(1..6);
                    let tokens: Vec<&str> =
                        (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
                    let mut d = doc(&format!("id{i}"), rng.gen_range(0..1_000_000), &tokens);
                    d.community = rng.gen_bool(0.5).then(|| "grp".to_string());
                    d.is_retweet = rng.gen_bool(0.3);
                    d
                })
                .collect();
            let mut buf = Vec::new();
            write_documents(&docs, &mut buf).unwrap();
            let back = ingest(Cursor::new(&buf), &CorpusConfig::default()).unwrap();
            prop_assert_eq!(docs, back);
        }
    }
}
