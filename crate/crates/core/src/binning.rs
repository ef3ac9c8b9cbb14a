//! Timeline partitioning at local maxima of daily document frequency.
//!
//! The corpus timeline is cut wherever the daily document count has a
//! prominent local maximum; nearby maxima are merged so that one burst of
//! activity yields one boundary. Each retained maximum starts a new bin,
//! producing irregular, day-aligned time periods.

use crate::corpus::{day_of_timestamp, Document, TimeBin};

#[derive(Debug, thiserror::Error)]
pub enum BinningError {
    #[error("daily series is empty")]
    EmptySeries,
    #[error("window must be at least 1 day")]
    ZeroWindow,
    #[error("retained maximum day {0} lies outside the corpus range")]
    MaximumOutOfRange(i64),
    #[error("retained maxima must be strictly ascending")]
    UnsortedMaxima,
    #[error("a maximum on the first day of the range would create an empty bin")]
    MaximumAtRangeStart,
}

/// Document counts over the contiguous days of the corpus range.
#[derive(Debug, Clone)]
pub struct DailySeries {
    start_day: i64,
    counts: Vec<u64>,
}

impl DailySeries {
    pub fn new(start_day: i64, counts: Vec<u64>) -> Self {
        DailySeries { start_day, counts }
    }

    /// Count documents per day over the inclusive day range spanned by `docs`.
    pub fn from_documents(docs: &[Document]) -> Result<Self, BinningError> {
        let days: Vec<i64> = docs.iter().map(|d| day_of_timestamp(d.timestamp)).collect();
        let (&lo, &hi) = match (days.iter().min(), days.iter().max()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(BinningError::EmptySeries),
        };
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for day in days {
            counts[(day - lo) as usize] += 1;
        }
        Ok(DailySeries { start_day: lo, counts })
    }

    pub fn start_day(&self) -> i64 {
        self.start_day
    }

    pub fn end_day(&self) -> i64 {
        self.start_day + self.counts.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count_on(&self, day: i64) -> u64 {
        let offset = day - self.start_day;
        if offset < 0 || offset as usize >= self.counts.len() {
            0
        } else {
            self.counts[offset as usize]
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Find interior days whose count strictly dominates every other day within
/// `±window` and reaches at least `min_prominence` of the global maximum.
///
/// The first and last day of the series are never candidates. Returns days
/// sorted ascending; an all-zero series yields none.
pub fn detect_maxima(
    series: &DailySeries,
    window: usize,
    min_prominence: f64,
) -> Result<Vec<i64>, BinningError> {
    if series.is_empty() {
        return Err(BinningError::EmptySeries);
    }
    if window == 0 {
        return Err(BinningError::ZeroWindow);
    }
    let counts = series.counts();
    let global_max = *counts.iter().max().unwrap();
    if global_max == 0 {
        return Ok(Vec::new());
    }
    let floor = min_prominence * global_max as f64;
    let mut maxima = Vec::new();
    for i in 1..counts.len().saturating_sub(1) {
        let c = counts[i];
        if (c as f64) < floor {
            continue;
        }
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(counts.len() - 1);
        let dominated = (lo..=hi).any(|j| j != i && counts[j] >= c);
        if !dominated {
            maxima.push(series.start_day() + i as i64);
        }
    }
    Ok(maxima)
}

/// Merge candidate maxima into groups chained by gaps of at most
/// `merge_window` days; each group keeps its highest-count day, ties broken
/// earliest. Output is sorted and has pairwise gaps greater than
/// `merge_window`.
pub fn merge_maxima(series: &DailySeries, candidates: &[i64], merge_window: i64) -> Vec<i64> {
    let mut retained = Vec::new();
    let mut group: Vec<i64> = Vec::new();
    for &day in candidates {
        if let Some(&last) = group.last() {
            if day - last > merge_window {
                retained.push(group_representative(series, &group));
                group.clear();
            }
        }
        group.push(day);
    }
    if !group.is_empty() {
        retained.push(group_representative(series, &group));
    }
    retained
}

fn group_representative(series: &DailySeries, group: &[i64]) -> i64 {
    let mut best = group[0];
    for &day in &group[1..] {
        if series.count_on(day) > series.count_on(best) {
            best = day;
        }
    }
    best
}

/// Turn retained maxima into bins: each maximum day starts a new bin, the
/// first bin starts at the corpus start, the last ends at the corpus end.
/// `k` maxima produce `k + 1` bins.
pub fn assign_bins(retained: &[i64], range: (i64, i64)) -> Result<Vec<TimeBin>, BinningError> {
    let (start, end) = range;
    for pair in retained.windows(2) {
        if pair[1] <= pair[0] {
            return Err(BinningError::UnsortedMaxima);
        }
    }
    for &m in retained {
        if m < start || m > end {
            return Err(BinningError::MaximumOutOfRange(m));
        }
        if m == start {
            return Err(BinningError::MaximumAtRangeStart);
        }
    }
    let mut bins = Vec::with_capacity(retained.len() + 1);
    let mut bin_start = start;
    for &m in retained {
        bins.push(TimeBin::from_days(bins.len(), bin_start, m - 1));
        bin_start = m;
    }
    bins.push(TimeBin::from_days(bins.len(), bin_start, end));
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::date_to_day;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn day(y: i32, m: u32, d: u32) -> i64 {
        date_to_day(NaiveDate::from_ymd_opt(y, m, d).unwrap())
    }

    /// Exhaustive-scan oracle: checks every day against the definition.
    fn maxima_oracle(series: &DailySeries, window: usize, min_prominence: f64) -> Vec<i64> {
        let counts = series.counts();
        let global = *counts.iter().max().unwrap_or(&0);
        let mut out = Vec::new();
        for i in 1..counts.len().saturating_sub(1) {
            if (counts[i] as f64) < min_prominence * global as f64 || counts[i] == 0 {
                continue;
            }
            let mut ok = true;
            for j in 0..counts.len() {
                let dist = i.abs_diff(j);
                if j != i && dist <= window && counts[j] >= counts[i] {
                    ok = false;
                    break;
                }
            }
            if ok {
                out.push(series.start_day() + i as i64);
            }
        }
        out
    }

    #[test]
    fn strictly_increasing_series_has_no_maxima() {
        let series = DailySeries::new(0, (1..=20).collect());
        assert!(detect_maxima(&series, 3, 0.0).unwrap().is_empty());
    }

    #[test]
    fn two_separated_peaks_both_detected() {
        let mut counts = vec![1u64; 40];
        counts[10] = 100;
        counts[30] = 80;
        let series = DailySeries::new(0, counts);
        let got = detect_maxima(&series, 7, 0.5).unwrap();
        assert_eq!(got, vec![10, 30]);
        assert_eq!(got, maxima_oracle(&series, 7, 0.5));
    }

    #[test]
    fn low_peak_excluded_by_prominence() {
        let mut counts = vec![1u64; 40];
        counts[10] = 100;
        counts[30] = 10;
        let series = DailySeries::new(0, counts);
        assert_eq!(detect_maxima(&series, 7, 0.2).unwrap(), vec![10]);
    }

    #[test]
    fn all_zero_series_yields_nothing() {
        let series = DailySeries::new(0, vec![0; 10]);
        assert!(detect_maxima(&series, 3, 0.1).unwrap().is_empty());
    }

    #[test]
    fn merge_prefers_higher_count_day() {
        // Candidate pair seven days apart; the later, busier day survives.
        let dec18 = day(2014, 12, 18);
        let dec25 = day(2014, 12, 25);
        let start = day(2014, 12, 1);
        let mut counts = vec![10u64; 60];
        counts[(dec18 - start) as usize] = 500;
        counts[(dec25 - start) as usize] = 900;
        let series = DailySeries::new(start, counts);
        assert_eq!(merge_maxima(&series, &[dec18, dec25], 30), vec![dec25]);
    }

    #[test]
    fn merge_keeps_singleton() {
        let series = DailySeries::new(0, vec![5; 100]);
        assert_eq!(merge_maxima(&series, &[42], 30), vec![42]);
    }

    #[test]
    fn merge_chains_three_candidates() {
        let mut counts = vec![1u64; 100];
        counts[10] = 50;
        counts[35] = 80;
        counts[60] = 40;
        let series = DailySeries::new(0, counts);
        // 10→35 and 35→60 are both within 30 days: one chain, best count wins.
        assert_eq!(merge_maxima(&series, &[10, 35, 60], 30), vec![35]);

        // Brute-force grouping oracle: enumerate all contiguous groupings and
        // keep the one whose consecutive gaps are all <= merge window and
        // which uses the fewest groups.
        let oracle = brute_force_merge(&series, &[10, 35, 60], 30);
        assert_eq!(oracle, vec![35]);
    }

    fn brute_force_merge(series: &DailySeries, candidates: &[i64], merge_window: i64) -> Vec<i64> {
        let n = candidates.len();
        if n == 0 {
            return Vec::new();
        }
        // Every grouping into contiguous segments is encoded by cut positions.
        let mut best: Option<Vec<(usize, usize)>> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let mut segments = Vec::new();
            let mut start = 0;
            for i in 0..n - 1 {
                if mask & (1 << i) != 0 {
                    segments.push((start, i));
                    start = i + 1;
                }
            }
            segments.push((start, n - 1));
            let valid = segments.iter().all(|&(a, b)| {
                (a..b).all(|i| candidates[i + 1] - candidates[i] <= merge_window)
            }) && segments
                .windows(2)
                .all(|w| candidates[w[1].0] - candidates[w[0].1] > merge_window);
            if valid && best.as_ref().map_or(true, |b| segments.len() < b.len()) {
                best = Some(segments);
            }
        }
        best.unwrap()
            .into_iter()
            .map(|(a, b)| {
                let mut rep = candidates[a];
                for &d in &candidates[a..=b] {
                    if series.count_on(d) > series.count_on(rep) {
                        rep = d;
                    }
                }
                rep
            })
            .collect()
    }

    #[test]
    fn six_maxima_make_seven_bins_matching_published_periods() {
        let start = day(2014, 1, 1);
        let end = day(2020, 12, 31);
        let maxima = vec![
            day(2014, 9, 2),
            day(2014, 12, 25),
            day(2015, 8, 31),
            day(2016, 7, 8),
            day(2020, 5, 27),
            day(2020, 8, 7),
        ];
        let bins = assign_bins(&maxima, (start, end)).unwrap();
        assert_eq!(bins.len(), 7);
        let spans: Vec<(String, String, i64)> = bins
            .iter()
            .map(|b| {
                (
                    b.start_date().to_string(),
                    b.end_date().to_string(),
                    b.end_day() - b.start_day() + 1,
                )
            })
            .collect();
        let expected = [
            ("2014-01-01", "2014-09-01", 244),
            ("2014-09-02", "2014-12-24", 114),
            ("2014-12-25", "2015-08-30", 249),
            ("2015-08-31", "2016-07-07", 312),
            ("2016-07-08", "2020-05-26", 1419),
            ("2020-05-27", "2020-08-06", 72),
            ("2020-08-07", "2020-12-31", 147),
        ];
        for (got, want) in spans.iter().zip(expected.iter()) {
            assert_eq!((got.0.as_str(), got.1.as_str(), got.2), *want);
        }
        assert_eq!(bins[2].start_date().to_string(), "2014-12-25");
    }

    #[test]
    fn zero_maxima_make_one_bin() {
        let bins = assign_bins(&[], (0, 99)).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].start_day(), bins[0].end_day()), (0, 99));
    }

    #[test]
    fn out_of_range_maximum_errors() {
        assert!(matches!(
            assign_bins(&[200], (0, 99)),
            Err(BinningError::MaximumOutOfRange(200))
        ));
    }

    proptest! {
        #[test]
        fn bins_are_disjoint_contiguous_and_cover_range(
            maxima_offsets in proptest::collection::btree_set(1i64..99, 0..6)
        ) {
            let retained: Vec<i64> = maxima_offsets.into_iter().collect();
            let bins = assign_bins(&retained, (0, 99)).unwrap();
            prop_assert_eq!(bins[0].start_day(), 0);
            prop_assert_eq!(bins.last().unwrap().end_day(), 99);
            for w in bins.windows(2) {
                prop_assert_eq!(w[0].end_day() + 1, w[1].start_day());
            }
            prop_assert_eq!(bins.len(), retained.len() + 1);
        }

        #[test]
        fn merged_maxima_gaps_exceed_window(
            days in proptest::collection::btree_set(0i64..300, 1..12),
            merge_window in 1i64..50,
        ) {
            let candidates: Vec<i64> = days.into_iter().collect();
            let counts: Vec<u64> = (0..300).map(|i| (i * 7919 % 101) as u64 + 1).collect();
            let series = DailySeries::new(0, counts);
            let retained = merge_maxima(&series, &candidates, merge_window);
            for w in retained.windows(2) {
                prop_assert!(w[1] - w[0] > merge_window);
            }
        }

        #[test]
        fn maxima_invariant_under_count_scaling(
            counts in proptest::collection::vec(0u64..100, 5..60),
            scale in 2u64..10,
            window in 1usize..8,
        ) {
            let series = DailySeries::new(0, counts.clone());
            let scaled = DailySeries::new(0, counts.iter().map(|c| c * scale).collect());
            let a = detect_maxima(&series, window, 0.1).unwrap();
            let b = detect_maxima(&scaled, window, 0.1).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn detect_matches_exhaustive_oracle(
            counts in proptest::collection::vec(0u64..50, 5..50),
            window in 1usize..6,
        ) {
            let series = DailySeries::new(0, counts);
            let got = detect_maxima(&series, window, 0.05).unwrap();
            let want = maxima_oracle(&series, window, 0.05);
            prop_assert_eq!(got, want);
        }
    }
}
