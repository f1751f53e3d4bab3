//! Estimators shared by the diagnostics: batch means, shared-grid histograms,
//! empirical distribution distances and small regression helpers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl MeanEstimate {
    pub fn exact(value: f64) -> Self {
        MeanEstimate { value, stderr: 0.0 }
    }

    /// `|value - target| <= z * stderr`
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.value - target).abs() <= z * self.stderr
    }
}

pub const DEFAULT_BATCHES: usize = 32;
pub const MIN_RELIABLE_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub estimate: MeanEstimate,
    pub n_batches: usize,
    /// False when fewer than [`MIN_RELIABLE_BATCHES`] batches were available.
    pub reliable: bool,
}

/// Weighted mean with a batch-means standard error over contiguous batches.
///
/// Correlated series (one long trajectory) need contiguous batches; the
/// stderr is the spread of batch means over `sqrt(B)`.
pub fn batch_means(values: &[f64], weights: &[f64], n_batches: usize) -> BatchMeans {
    assert_eq!(values.len(), weights.len());
    let n = values.len();
    if n == 0 {
        return BatchMeans {
            estimate: MeanEstimate::exact(0.0),
            n_batches: 0,
            reliable: false,
        };
    }
    let total_w: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total_w;
    let b = n_batches.clamp(1, n);
    let mut batch = Vec::with_capacity(b);
    for j in 0..b {
        let (lo, hi) = (j * n / b, (j + 1) * n / b);
        let w: f64 = weights[lo..hi].iter().sum();
        if w > 0.0 {
            let s: f64 = values[lo..hi].iter().zip(&weights[lo..hi]).map(|(v, w)| v * w).sum();
            batch.push((s / w, w));
        }
    }
    let stderr = if batch.len() < 2 {
        0.0
    } else {
        // Batch means weighted by batch mass; equal weights reduce to the usual formula.
        let bw: f64 = batch.iter().map(|(_, w)| w).sum();
        let var = batch.iter().map(|(m, w)| w * (m - mean).powi(2)).sum::<f64>() / bw;
        (var / (batch.len() - 1) as f64).sqrt()
    };
    BatchMeans {
        estimate: MeanEstimate { value: mean, stderr },
        n_batches: batch.len(),
        reliable: batch.len() >= MIN_RELIABLE_BATCHES,
    }
}

/// Mean and standard error of independent samples.
pub fn mean_stderr(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate::exact(0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanEstimate { value: mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanEstimate {
        value: mean,
        stderr: (var / n as f64).sqrt(),
    }
}

pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Regular-grid bin geometry: bin `i` along axis `j` covers
/// `[origin_j + i w_j, origin_j + (i + 1) w_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub origin: Vec<f64>,
    pub widths: Vec<f64>,
}

impl BinSpec {
    pub fn dim(&self) -> usize {
        self.widths.len()
    }

    /// Freedman–Diaconis widths `2 IQR n^{-1/3}` per coordinate, anchored at 0.
    pub fn freedman_diaconis(samples: &[f64], dim: usize) -> Result<Self> {
        let n = samples.len() / dim;
        if n < 2 {
            return Err(Error::invalid("Freedman-Diaconis binning needs at least two samples"));
        }
        let mut widths = Vec::with_capacity(dim);
        for c in 0..dim {
            let coord = sorted_copy(&samples.iter().skip(c).step_by(dim).copied().collect::<Vec<_>>());
            let iqr = quantile_sorted(&coord, 0.75) - quantile_sorted(&coord, 0.25);
            let mut w = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
            if !(w > 0.0) {
                // Degenerate spread: fall back to a range-based width.
                let range = coord[coord.len() - 1] - coord[0];
                w = if range > 0.0 { range / 10.0 } else { 1.0 };
            }
            widths.push(w);
        }
        Ok(BinSpec {
            origin: vec![0.0; dim],
            widths,
        })
    }

    #[inline]
    pub fn bin_of(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .zip(self.origin.iter().zip(&self.widths))
            .map(|(v, (o, w))| ((v - o) / w).floor() as i64)
            .collect()
    }
}

/// Sparse normalized histogram on a [`BinSpec`] grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: BinSpec,
    pub mass: BTreeMap<Vec<i64>, f64>,
    pub n_samples: usize,
}

impl Histogram {
    /// Weighted histogram of row-major `samples`; weights are normalized.
    pub fn from_samples(spec: BinSpec, samples: &[f64], weights: Option<&[f64]>) -> Self {
        let dim = spec.dim();
        let n = samples.len() / dim;
        let total: f64 = weights.map(|w| w.iter().sum()).unwrap_or(n as f64);
        let mut mass = BTreeMap::new();
        for (i, x) in samples.chunks_exact(dim).enumerate() {
            let w = weights.map(|w| w[i]).unwrap_or(1.0) / total;
            *mass.entry(spec.bin_of(x)).or_insert(0.0) += w;
        }
        Histogram {
            spec,
            mass,
            n_samples: n,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }
}

/// Half the L1 distance between two histograms on the same grid.
pub fn tv_distance(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::BinningMismatch);
    }
    let mut sum = 0.0;
    for (k, pa) in &a.mass {
        sum += (pa - b.mass.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, pb) in &b.mass {
        if !a.mass.contains_key(k) {
            sum += pb;
        }
    }
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// Expected histogram TV between two independent samples of sizes `n` and
/// `m` from the law `p` (per-bin normal approximation). Used as the noise band
/// of a TV estimate.
pub fn tv_noise_band(p: &Histogram, n: usize, m: usize) -> f64 {
    let scale = 1.0 / n as f64 + 1.0 / m as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * p.mass.values().map(|&q| c * (q * (1.0 - q) * scale).sqrt()).sum::<f64>()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted_copy(samples);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// 95% two-sample KS noise floor `1.36 sqrt((n + m) / (n m))`.
pub fn ks_noise_floor(n: usize, m: usize) -> f64 {
    1.36 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Wasserstein-1 distance between two empirical laws on the line
/// (`∫ |F_a - F_b|`).
pub fn wasserstein1_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        prev = x;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    total
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    pearson(&rx, &ry)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Scalar Silverman bandwidth `σ̄ (4 / ((d + 2) n))^{1/(d+4)}` with σ̄ the mean
/// coordinate standard deviation of the pooled samples.
pub fn silverman_bandwidth(pooled: &[f64], dim: usize, n_per_density: usize) -> f64 {
    let sd: f64 = (0..dim)
        .map(|c| sample_variance(&pooled.iter().skip(c).step_by(dim).copied().collect::<Vec<_>>()).sqrt())
        .sum::<f64>()
        / dim as f64;
    let d = dim as f64;
    sd * (4.0 / ((d + 2.0) * n_per_density as f64)).powf(1.0 / (d + 4.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [0.3, -1.0, 2.0, 0.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn ks_disjoint_samples_is_one() {
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[5.0, 6.0, 7.0]), 1.0);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        // Midpoints of n cells against U(0,1): sup distance is 1/(2n).
        let n = 10;
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_one_sample(&s, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_of_shift_is_shift() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert!((wasserstein1_two_sample(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_monotone_and_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[0.4, 0.2, 0.1], &[0.03, 0.007, 0.009]) - 0.5).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn tv_rejects_mismatched_grids() {
        let a = Histogram::from_samples(BinSpec { origin: vec![0.0], widths: vec![1.0] }, &[0.5], None);
        let b = Histogram::from_samples(BinSpec { origin: vec![0.0], widths: vec![0.5] }, &[0.5], None);
        assert!(matches!(tv_distance(&a, &b), Err(Error::BinningMismatch)));
    }

    #[test]
    fn batch_means_of_constant_has_zero_stderr() {
        let v = vec![2.5; 100];
        let w = vec![0.01; 100];
        let bm = batch_means(&v, &w, 32);
        assert!((bm.estimate.value - 2.5).abs() < 1e-12);
        assert!(bm.estimate.stderr < 1e-12);
        assert!(bm.reliable);
        assert!(!batch_means(&v[..5], &w[..5], 32).reliable);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let (a, b) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn histogram_mass_is_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..200), w in 0.01f64..3.0) {
            let h = Histogram::from_samples(BinSpec { origin: vec![0.0], widths: vec![w] }, &xs, None);
            prop_assert!((h.total_mass() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tv_is_a_bounded_symmetric_distance(
            a in proptest::collection::vec(-5.0f64..5.0, 1..100),
            b in proptest::collection::vec(-5.0f64..5.0, 1..100),
        ) {
            let spec = BinSpec { origin: vec![0.0], widths: vec![0.5] };
            let ha = Histogram::from_samples(spec.clone(), &a, None);
            let hb = Histogram::from_samples(spec, &b, None);
            let d = tv_distance(&ha, &hb).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - tv_distance(&hb, &ha).unwrap()).abs() < 1e-12);
            prop_assert_eq!(tv_distance(&ha, &ha).unwrap(), 0.0);
        }

        #[test]
        fn ks_is_symmetric_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 1..60),
            b in proptest::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            let d = ks_two_sample(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - ks_two_sample(&b, &a)).abs() < 1e-12);
        }
    }
}
