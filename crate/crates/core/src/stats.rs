//! Empirical distributions and the goodness-of-fit measures used by the
//! acceptance tests: Pearson χ² against a discrete law, the two-sample
//! Kolmogorov-Smirnov test, and total-variation distance on a binning.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Categories whose expected count falls below this are pooled.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;
/// Default number of equal-probability bins for continuous samples.
pub const DEFAULT_BINS: usize = 50;
/// Minimum sample size for the asymptotic KS p-value.
pub const KS_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("observed value {0} has no expected probability and no pooled bucket to fall into")]
    DomainMismatch(f64),
    #[error("expected probabilities sum to {0}, not 1")]
    ExpectedNotNormalized(f64),
    #[error("{test} needs {needs} samples")]
    KindMismatch { test: &'static str, needs: &'static str },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite sample {0}")]
    NonFinite(f64),
}

/// A real used as a map key, ordered by `f64::total_cmp`.
#[derive(Clone, Copy, Debug)]
pub struct Key(pub f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Samples summarised either as category counts or as a sorted array.
#[derive(Clone, Debug, PartialEq)]
pub enum EmpiricalDist {
    Discrete { counts: BTreeMap<Key, u64>, n: u64 },
    Continuous { sorted: Vec<f64> },
}

impl EmpiricalDist {
    pub fn discrete(values: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = BTreeMap::new();
        let mut n = 0;
        for v in values {
            *counts.entry(Key(v)).or_insert(0) += 1;
            n += 1;
        }
        EmpiricalDist::Discrete { counts, n }
    }

    pub fn continuous(values: impl IntoIterator<Item = f64>) -> Result<Self, StatsError> {
        let mut sorted: Vec<f64> = values.into_iter().collect();
        if let Some(&bad) = sorted.iter().find(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(bad));
        }
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalDist::Continuous { sorted })
    }

    pub fn len(&self) -> u64 {
        match self {
            EmpiricalDist::Discrete { n, .. } => *n,
            EmpiricalDist::Continuous { sorted } => sorted.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Empirical probability of `v` (discrete) or of the exact value `v` (continuous).
    pub fn frequency(&self, v: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let count = match self {
            EmpiricalDist::Discrete { counts, .. } => counts.get(&Key(v)).copied().unwrap_or(0),
            EmpiricalDist::Continuous { sorted } => {
                let lo = sorted.partition_point(|x| x.total_cmp(&v) == Ordering::Less);
                let hi = sorted.partition_point(|x| x.total_cmp(&v) != Ordering::Greater);
                (hi - lo) as u64
            }
        };
        count as f64 / self.len() as f64
    }

    /// All samples in ascending order.
    pub fn sorted_values(&self) -> Vec<f64> {
        match self {
            EmpiricalDist::Discrete { counts, .. } => {
                counts.iter().flat_map(|(k, &c)| std::iter::repeat_n(k.0, c as usize)).collect()
            }
            EmpiricalDist::Continuous { sorted } => sorted.clone(),
        }
    }
}

/// Result of a test: the statistic and its p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom (χ²) or 0 (KS).
    pub df: usize,
}

/// Pearson χ² goodness of fit of `observed` against the law `expected`
/// (value, probability) pairs.
///
/// Categories with expected count below [`MIN_EXPECTED_COUNT`] are pooled
/// into one bucket together with any observed value outside the listed
/// support; if the pooled bucket itself is still too small it is merged
/// with the least expected remaining category.
pub fn chi_square_discrete(observed: &EmpiricalDist, expected: &[(f64, f64)]) -> Result<TestResult, StatsError> {
    let total: f64 = expected.iter().map(|&(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(StatsError::ExpectedNotNormalized(total));
    }
    let n = observed.len() as f64;
    let obs_of = |v: f64| observed.frequency(v) * n;

    // (expected count, observed count) per bucket.
    let mut buckets: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    let mut pooled_any = false;
    let mut listed = BTreeMap::new();
    for &(v, p) in expected {
        *listed.entry(Key(v)).or_insert(0.0) += p;
    }
    for (v, &p) in &listed {
        let e = p * n;
        if e < MIN_EXPECTED_COUNT {
            pooled.0 += e;
            pooled.1 += obs_of(v.0);
            pooled_any = true;
        } else {
            buckets.push((e, obs_of(v.0)));
        }
    }
    let unlisted: Vec<(f64, f64)> = match observed {
        EmpiricalDist::Discrete { counts, .. } => counts
            .iter()
            .filter(|(k, _)| listed.get(k).is_none_or(|&p| p == 0.0))
            .map(|(k, &c)| (k.0, c as f64))
            .collect(),
        EmpiricalDist::Continuous { sorted } => {
            let mut out: Vec<(f64, f64)> = Vec::new();
            for &v in sorted.iter().filter(|v| listed.get(&Key(**v)).is_none_or(|&p| p == 0.0)) {
                match out.last_mut() {
                    Some((w, c)) if Key(*w) == Key(v) => *c += 1.0,
                    _ => out.push((v, 1.0)),
                }
            }
            out
        }
    };
    for (v, c) in unlisted {
        if !pooled_any {
            return Err(StatsError::DomainMismatch(v));
        }
        // Zero-probability listed values already went into the pool.
        if !listed.contains_key(&Key(v)) {
            pooled.1 += c;
        }
    }
    if pooled_any {
        if pooled.0 < MIN_EXPECTED_COUNT && !buckets.is_empty() {
            let i = (0..buckets.len())
                .min_by(|&i, &j| buckets[i].0.total_cmp(&buckets[j].0).then(buckets[i].1.total_cmp(&buckets[j].1)))
                .expect("nonempty");
            let (e, o) = buckets.swap_remove(i);
            pooled.0 += e;
            pooled.1 += o;
        }
        buckets.push(pooled);
    }
    let statistic: f64 = buckets.iter().filter(|(e, _)| *e > 0.0).map(|(e, o)| (o - e) * (o - e) / e).sum();
    let df = buckets.len().saturating_sub(1);
    let p_value =
        if df == 0 { 1.0 } else { ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(statistic) };
    Ok(TestResult { statistic, p_value, df })
}

/// Pearson χ² test that two discrete samples come from the same law.
///
/// Categories whose pooled count gives an expected count below
/// [`MIN_EXPECTED_COUNT`] in either sample are merged into one bucket.
pub fn chi_square_homogeneity(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<TestResult, StatsError> {
    let (EmpiricalDist::Discrete { counts: ca, n: na }, EmpiricalDist::Discrete { counts: cb, n: nb }) = (a, b) else {
        return Err(StatsError::KindMismatch { test: "the homogeneity test", needs: "discrete" });
    };
    let (na, nb) = (*na as f64, *nb as f64);
    let total = na + nb;
    let mut keys: Vec<Key> = ca.keys().chain(cb.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let mut buckets: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for k in keys {
        let cell = (ca.get(&k).copied().unwrap_or(0) as f64, cb.get(&k).copied().unwrap_or(0) as f64);
        let row = cell.0 + cell.1;
        if row * na.min(nb) / total < MIN_EXPECTED_COUNT {
            pooled.0 += cell.0;
            pooled.1 += cell.1;
        } else {
            buckets.push(cell);
        }
    }
    if pooled.0 + pooled.1 > 0.0 {
        buckets.push(pooled);
    }
    let statistic: f64 = buckets
        .iter()
        .map(|&(x, y)| {
            let row = x + y;
            let (ex, ey) = (row * na / total, row * nb / total);
            (x - ex) * (x - ex) / ex + (y - ey) * (y - ey) / ey
        })
        .sum();
    let df = buckets.len().saturating_sub(1);
    let p_value =
        if df == 0 { 1.0 } else { ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(statistic) };
    Ok(TestResult { statistic, p_value, df })
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<TestResult, StatsError> {
    let (EmpiricalDist::Continuous { sorted: xs }, EmpiricalDist::Continuous { sorted: ys }) = (a, b) else {
        return Err(StatsError::KindMismatch { test: "the KS test", needs: "continuous" });
    };
    for s in [xs, ys] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(StatsError::TooFewSamples { needed: KS_MIN_SAMPLES, got: s.len() });
        }
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    Ok(TestResult { statistic: d, p_value, df: 0 })
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * x * x).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// A partition of the real line, or of a finite set of categories.
#[derive(Clone, Debug, PartialEq)]
pub enum Binning {
    /// Bins `(-inf, e0], (e0, e1], ..., (e_last, inf)`.
    Edges(Vec<f64>),
    /// One bin per distinct value.
    Categories,
}

impl Binning {
    /// `bins` bins of equal probability under the pooled samples.
    pub fn equal_probability(samples: &[&EmpiricalDist], bins: usize) -> Binning {
        let mut pooled: Vec<f64> = samples.iter().flat_map(|d| d.sorted_values()).collect();
        pooled.sort_by(f64::total_cmp);
        if pooled.is_empty() || bins < 2 {
            return Binning::Edges(Vec::new());
        }
        let n = pooled.len();
        let mut edges: Vec<f64> = (1..bins).map(|i| pooled[((i * n).div_ceil(bins)).max(1) - 1]).collect();
        edges.dedup_by(|a, b| a.total_cmp(b) == Ordering::Equal);
        Binning::Edges(edges)
    }

    fn histogram(&self, d: &EmpiricalDist) -> BTreeMap<Key, f64> {
        let mut h = BTreeMap::new();
        let n = d.len() as f64;
        if n == 0.0 {
            return h;
        }
        match self {
            Binning::Categories => {
                for v in d.sorted_values() {
                    *h.entry(Key(v)).or_insert(0.0) += 1.0 / n;
                }
            }
            Binning::Edges(edges) => {
                for v in d.sorted_values() {
                    let i = edges.partition_point(|e| e.total_cmp(&v) == Ordering::Less);
                    *h.entry(Key(i as f64)).or_insert(0.0) += 1.0 / n;
                }
            }
        }
        h
    }
}

/// `½ Σ |p̂ᵢ − q̂ᵢ|` over the bins of `binning`.
pub fn tv_binned(a: &EmpiricalDist, b: &EmpiricalDist, binning: &Binning) -> f64 {
    let (ha, hb) = (binning.histogram(a), binning.histogram(b));
    let mut keys: Vec<Key> = ha.keys().chain(hb.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let sum: f64 = keys.iter().map(|k| (ha.get(k).unwrap_or(&0.0) - hb.get(k).unwrap_or(&0.0)).abs()).sum();
    (0.5 * sum).clamp(0.0, 1.0)
}

/// [`tv_binned`] with categories for two discrete samples and
/// [`DEFAULT_BINS`] equal-probability bins otherwise.
pub fn tv_default(a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    let binning = match (a, b) {
        (EmpiricalDist::Discrete { .. }, EmpiricalDist::Discrete { .. }) => Binning::Categories,
        _ => Binning::equal_probability(&[a, b], DEFAULT_BINS),
    };
    tv_binned(a, b, &binning)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Summary statistics for export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    /// Keys `q01 q05 q25 q50 q75 q95 q99`.
    pub quantiles: BTreeMap<String, f64>,
    pub histogram: Vec<HistogramBin>,
}

const SUMMARY_QUANTILES: [(&str, f64); 7] =
    [("q01", 0.01), ("q05", 0.05), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("q95", 0.95), ("q99", 0.99)];

/// Linearly interpolated quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, unbiased variance, quantiles, and a histogram with one bin per
/// value for discrete samples or `bins` equal-width bins otherwise.
pub fn summarize(d: &EmpiricalDist, bins: usize) -> Summary {
    let values = d.sorted_values();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance =
        if n > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { f64::NAN };
    let quantiles = SUMMARY_QUANTILES.iter().map(|&(k, q)| (k.to_string(), quantile(&values, q))).collect();
    let histogram = match d {
        EmpiricalDist::Discrete { counts, .. } => {
            counts.iter().map(|(k, &count)| HistogramBin { lo: k.0, hi: k.0, count }).collect()
        }
        EmpiricalDist::Continuous { sorted } if !sorted.is_empty() && bins > 0 => {
            let (lo, hi) = (sorted[0], sorted[n - 1]);
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0u64; bins];
            for &v in sorted {
                let i = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
                counts[i] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin { lo: lo + i as f64 * width, hi: lo + (i + 1) as f64 * width, count })
                .collect()
        }
        EmpiricalDist::Continuous { .. } => Vec::new(),
    };
    Summary { n: n as u64, mean, variance, quantiles, histogram }
}

/// Standard error of a mean from correlated draws, by batch means over
/// `batches` contiguous batches.
pub fn batch_means_se(values: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(values.len());
    let size = values.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = values.chunks_exact(size).take(b).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}
