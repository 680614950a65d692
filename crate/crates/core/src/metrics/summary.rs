use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cps::CpsMode;
use crate::SimTime;

/// Exact counts of AOI values at microsecond resolution.
pub type AoiHistogram = BTreeMap<SimTime, u64>;

fn ms(t: SimTime) -> f64 {
    t.as_micros() as f64 / 1000.0
}

/// Value at 0-based rank `i` of the sorted expansion of `hist`.
fn nth(hist: &AoiHistogram, i: u64) -> SimTime {
    let mut seen = 0;
    for (v, c) in hist {
        seen += c;
        if i < seen {
            return *v;
        }
    }
    panic!("rank {i} out of range")
}

/// [`quantile`] over the expanded histogram, in milliseconds.
pub fn histogram_quantile(hist: &AoiHistogram, p: f64) -> f64 {
    let n: u64 = hist.values().sum();
    assert!(n > 0, "quantile of empty histogram");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as u64;
    let hi = (lo + 1).min(n - 1);
    let (a, b) = (ms(nth(hist, lo)), ms(nth(hist, hi)));
    a + (h - lo as f64) * (b - a)
}

/// Quantile of sorted data using linear interpolation between order
/// statistics (Hyndman-Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Empirical CDF as `(value, fraction <= value)` at each distinct value.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let v = sorted(values);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}

/// A statistic, or an explicit marker when there were no samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Stat<T> {
    Data(T),
    Missing(NoData),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoData {
    #[serde(rename = "no_data")]
    NoData,
}

impl<T> Stat<T> {
    fn from_samples(values: &[f64], f: impl FnOnce(&[f64]) -> T) -> Self {
        if values.is_empty() {
            Stat::Missing(NoData::NoData)
        } else {
            Stat::Data(f(values))
        }
    }

    pub fn data(&self) -> Option<&T> {
        match self {
            Stat::Data(t) => Some(t),
            Stat::Missing(_) => None,
        }
    }
}

/// Box-plot statistics with whiskers at the most extreme samples within
/// 1.5 IQR of the quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub whisker_low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_high: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn compute(values: &[f64]) -> Self {
        let v = sorted(values);
        let q1 = quantile(&v, 0.25);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let lo_fence = q1 - 1.5 * iqr;
        let hi_fence = q3 + 1.5 * iqr;
        let whisker_low = *v.iter().find(|x| **x >= lo_fence).expect("non-empty");
        let whisker_high = *v.iter().rev().find(|x| **x <= hi_fence).expect("non-empty");
        Self {
            n: v.len(),
            mean: mean(&v),
            min: v[0],
            whisker_low,
            q1,
            median: quantile(&v, 0.5),
            q3,
            whisker_high,
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoiStats {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p85_ms: f64,
    pub p99_ms: f64,
    pub threshold_ms: f64,
    /// Fraction of samples strictly below `threshold_ms`.
    pub share_below_threshold: f64,
}

impl AoiStats {
    pub fn compute(hist: &AoiHistogram, threshold_ms: f64) -> Self {
        let n: u64 = hist.values().sum();
        let total: f64 = hist.iter().map(|(v, c)| ms(*v) * *c as f64).sum();
        let below: u64 = hist.iter().filter(|(v, _)| ms(**v) < threshold_ms).map(|(_, c)| c).sum();
        Self {
            n: n as usize,
            mean_ms: total / n as f64,
            p50_ms: histogram_quantile(hist, 0.5),
            p85_ms: histogram_quantile(hist, 0.85),
            p99_ms: histogram_quantile(hist, 0.99),
            threshold_ms,
            share_below_threshold: below as f64 / n as f64,
        }
    }

    /// Fraction of samples at or below `t_ms`.
    pub fn cdf_at(hist: &AoiHistogram, t_ms: f64) -> f64 {
        let n: u64 = hist.values().sum();
        let le: u64 = hist.iter().filter(|(v, _)| ms(**v) <= t_ms).map(|(_, c)| c).sum();
        le as f64 / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbrStats {
    pub n: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

impl CbrStats {
    pub fn compute(values: &[f64]) -> Self {
        let v = sorted(values);
        Self { n: v.len(), mean: mean(&v), p50: quantile(&v, 0.5), p90: quantile(&v, 0.9), max: v[v.len() - 1] }
    }
}

/// One sweep cell: mode, density and penetration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub mode: CpsMode,
    pub density: f64,
    pub penetration: f64,
}

impl CellKey {
    pub fn new(mode: CpsMode, density: f64, penetration: f64) -> Self {
        Self { mode, density, penetration }
    }

    fn sort_key(&self) -> (usize, u64, u64) {
        let m = CpsMode::ALL.iter().position(|x| *x == self.mode).expect("known mode");
        (m, (self.density * 1e6).round() as u64, (self.penetration * 1e6).round() as u64)
    }
}

/// Pooled raw samples of one cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellSamples {
    pub seeds: Vec<u64>,
    pub ear: Vec<f64>,
    pub aoi: AoiHistogram,
    pub cbr: Vec<f64>,
    pub potential: Vec<f64>,
    pub carried: Vec<f64>,
}

impl CellSamples {
    pub fn extend(&mut self, other: CellSamples) {
        self.seeds.extend(other.seeds);
        self.ear.extend(other.ear);
        for (v, c) in other.aoi {
            *self.aoi.entry(v).or_insert(0) += c;
        }
        self.cbr.extend(other.cbr);
        self.potential.extend(other.potential);
        self.carried.extend(other.carried);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(flatten)]
    pub key: CellKey,
    pub seeds: Vec<u64>,
    pub ear: Stat<BoxStats>,
    pub aoi: Stat<AoiStats>,
    pub cbr: Stat<CbrStats>,
    pub potential_objects: Stat<BoxStats>,
    pub carried_objects: Stat<BoxStats>,
}

impl CellSummary {
    pub fn compute(key: CellKey, s: &CellSamples, aoi_threshold_ms: f64) -> Self {
        let mut seeds = s.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        Self {
            key,
            seeds,
            ear: Stat::from_samples(&s.ear, BoxStats::compute),
            aoi: if s.aoi.is_empty() {
                Stat::Missing(NoData::NoData)
            } else {
                Stat::Data(AoiStats::compute(&s.aoi, aoi_threshold_ms))
            },
            cbr: Stat::from_samples(&s.cbr, CbrStats::compute),
            potential_objects: Stat::from_samples(&s.potential, BoxStats::compute),
            carried_objects: Stat::from_samples(&s.carried, BoxStats::compute),
        }
    }
}

/// Pools samples per cell across seeds, ordered by mode, density and
/// penetration.
pub fn pool_cells<I>(cells: I) -> Vec<(CellKey, CellSamples)>
where
    I: IntoIterator<Item = (CellKey, CellSamples)>,
{
    let mut pooled: BTreeMap<(usize, u64, u64), (CellKey, CellSamples)> = BTreeMap::new();
    for (key, samples) in cells {
        pooled.entry(key.sort_key()).or_insert_with(|| (key, CellSamples::default())).1.extend(samples);
    }
    pooled.into_values().collect()
}

/// Pools and summarizes each cell.
pub fn summarize_cells<I>(cells: I, aoi_threshold_ms: f64) -> Vec<CellSummary>
where
    I: IntoIterator<Item = (CellKey, CellSamples)>,
{
    pool_cells(cells).iter().map(|(k, s)| CellSummary::compute(*k, s, aoi_threshold_ms)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_of_three() {
        assert_eq!(quantile(&[55.0, 80.0, 285.0], 0.5), 80.0);
    }

    #[test]
    fn r7_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-12);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_distribution() {
        let b = BoxStats::compute(&[1.0; 20]);
        assert_eq!(b.median, 1.0);
        assert_eq!(b.q3 - b.q1, 0.0);
    }

    #[test]
    fn whiskers_exclude_outliers() {
        let mut v: Vec<f64> = (0..20).map(f64::from).collect();
        v.push(1000.0);
        let b = BoxStats::compute(&v);
        assert_eq!(b.whisker_high, 19.0);
        assert_eq!(b.max, 1000.0);
    }

    #[test]
    fn empty_cells_are_marked() {
        let key = CellKey::new(CpsMode::Baseline, 30.0, 0.05);
        let s = CellSummary::compute(key, &CellSamples::default(), 200.0);
        assert!(s.ear.data().is_none());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"ear\":\"no_data\""), "{json}");
    }

    #[test]
    fn pooling_uses_samples_not_run_medians() {
        let key = CellKey::new(CpsMode::Baseline, 30.0, 0.1);
        let a = CellSamples { seeds: vec![1], ear: vec![0.1, 0.2, 0.3], ..Default::default() };
        let b = CellSamples { seeds: vec![2], ear: vec![0.9], ..Default::default() };
        let out = summarize_cells([(key, a), (key, b)], 200.0);
        assert_eq!(out.len(), 1);
        // Pooled median of {0.1, 0.2, 0.3, 0.9}; the median of run medians would be 0.55.
        assert!((out[0].ear.data().unwrap().median - 0.25).abs() < 1e-12);
        assert_eq!(out[0].seeds, vec![1, 2]);
    }

    fn hist(values_us: &[u64]) -> AoiHistogram {
        let mut h = AoiHistogram::new();
        for v in values_us {
            *h.entry(SimTime::from_micros(*v)).or_insert(0) += 1;
        }
        h
    }

    #[test]
    fn aoi_share_threshold_is_strict() {
        let s = AoiStats::compute(&hist(&[100_000, 199_900, 200_000, 300_000]), 200.0);
        assert_eq!(s.share_below_threshold, 0.5);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn aoi_median_of_counts() {
        let mut h = hist(&[55_000]);
        h.insert(SimTime::from_micros(285_000), 3);
        assert_eq!(AoiStats::compute(&h, 200.0).p50_ms, 285.0);
        assert_eq!(AoiStats::cdf_at(&h, 100.0), 0.25);
    }

    proptest! {
        #[test]
        fn ecdf_matches_counting(values in prop::collection::vec(0u32..50, 1..200)) {
            let v: Vec<f64> = values.iter().map(|x| f64::from(*x)).collect();
            for (x, f) in ecdf(&v) {
                let count = v.iter().filter(|y| **y <= x).count();
                prop_assert!((f - count as f64 / v.len() as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn histogram_matches_expanded_sample(values in prop::collection::vec(0u64..5_000, 1..300), p in 0.0f64..1.0) {
            let mut v: Vec<f64> = values.iter().map(|x| *x as f64 / 1000.0).collect();
            v.sort_by(f64::total_cmp);
            let h = hist(&values);
            prop_assert!((histogram_quantile(&h, p) - quantile(&v, p)).abs() < 1e-9);
            let s = AoiStats::compute(&h, 2.0);
            prop_assert!((s.mean_ms - mean(&v)).abs() < 1e-9);
            let below = v.iter().filter(|x| **x < 2.0).count();
            prop_assert_eq!(s.share_below_threshold, below as f64 / v.len() as f64);
        }

        #[test]
        fn quantile_is_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..100), p in 0.0f64..1.0, q in 0.0f64..1.0) {
            v.sort_by(f64::total_cmp);
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
            prop_assert!(quantile(&v, lo) >= v[0] && quantile(&v, hi) <= v[v.len() - 1]);
        }
    }
}
