//! Goodness-of-fit and trend tests used by the verification harness.

use serde::{Deserialize, Serialize};

use crate::estimate::MomentEstimate;
use crate::grid::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS p-value for distance `d` at effective sample size `ne`.
pub fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
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
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p(d, n * m / (n + m)),
    }
}

/// One-sample KS against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p(d, n),
    }
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Mann-Kendall statistic `S = sum_{i<j} sign(x_j - x_i)`.
pub fn mann_kendall_s(values: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            s += sign(values[j] - values[i]);
        }
    }
    s
}

/// One-sided (increasing) Mann-Kendall p-value. Exact permutation
/// distribution for up to 8 points, normal approximation above.
pub fn mann_kendall_p_increasing(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 1.0;
    }
    let s = mann_kendall_s(values);
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let (mut hits, mut total) = (0u64, 0u64);
        permute(&mut perm, 0, &mut |p| {
            let x: Vec<f64> = p.iter().map(|&k| k as f64).collect();
            total += 1;
            if mann_kendall_s(&x) >= s {
                hits += 1;
            }
        });
        return hits as f64 / total as f64;
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else {
        s as f64 / var.sqrt()
    };
    1.0 - normal_cdf(z)
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendVerdict {
    Flat,
    Increasing,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Mann-Kendall on the horizon means (no power below 4 points at 0.05).
    pub mk_means_s: i64,
    pub mk_means_p: f64,
    /// Mann-Kendall over batch means grouped by horizon.
    pub mk_batch_s: i64,
    pub mk_batch_z: f64,
    pub mk_batch_p: f64,
    /// Consecutive 95% intervals strictly increasing and disjoint.
    pub ci_strictly_increasing: bool,
    /// Every consecutive pair of 95% intervals overlaps.
    pub ci_all_overlap: bool,
    pub verdict: TrendVerdict,
}

/// Trend test over independent ensembles, one per horizon (in increasing
/// horizon order).
///
/// Each ensemble is cut into `n_batches` contiguous batches whose means are
/// close to Gaussian; the Mann-Kendall statistic is then taken over all pairs
/// of batch means from different horizons, with the tied-time variance
/// correction. A rank test on the raw replica values would respond to shifts
/// of the median, which for skewed moment samples can move against the mean.
pub fn classify_trend(groups: &[Vec<f64>], n_batches: usize, alpha: f64) -> TrendReport {
    let estimates: Vec<MomentEstimate> = groups
        .iter()
        .map(|g| MomentEstimate::from_samples(g))
        .collect();
    let means: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let std_errors: Vec<f64> = estimates.iter().map(|e| e.std_error).collect();

    let batches: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let b = n_batches.clamp(1, g.len());
            let size = g.len() / b;
            (0..b)
                .map(|k| {
                    let chunk = &g[k * size..if k + 1 == b { g.len() } else { (k + 1) * size }];
                    chunk.iter().sum::<f64>() / chunk.len() as f64
                })
                .collect()
        })
        .collect();
    let mut s: i64 = 0;
    for gi in 0..batches.len() {
        for gj in gi + 1..batches.len() {
            for &a in &batches[gi] {
                for &b in &batches[gj] {
                    s += sign(b - a);
                }
            }
        }
    }
    let n: f64 = batches.iter().map(|b| b.len() as f64).sum();
    let tie_term: f64 = batches
        .iter()
        .map(|b| {
            let k = b.len() as f64;
            k * (k - 1.0) * (2.0 * k + 5.0)
        })
        .sum();
    let var = (n * (n - 1.0) * (2.0 * n + 5.0) - tie_term) / 18.0;
    let z = if var > 0.0 {
        let cc = if s > 0 {
            1.0
        } else if s < 0 {
            -1.0
        } else {
            0.0
        };
        (s as f64 - cc) / var.sqrt()
    } else {
        0.0
    };
    let p = 1.0 - normal_cdf(z);

    let ci: Vec<(f64, f64)> = estimates.iter().map(|e| e.ci95()).collect();
    let ci_strictly_increasing = ci.windows(2).all(|w| w[1].0 > w[0].1);
    let ci_all_overlap = ci.windows(2).all(|w| w[1].0 <= w[0].1 && w[0].0 <= w[1].1);

    let verdict = if p < alpha {
        TrendVerdict::Increasing
    } else {
        let first = estimates.first().unwrap();
        let last = estimates.last().unwrap();
        let half = 1.96 * last.minus(first).std_error;
        if half > 0.5 * first.value.abs().max(1e-300) {
            TrendVerdict::Inconclusive
        } else {
            TrendVerdict::Flat
        }
    };
    TrendReport {
        mk_means_s: mann_kendall_s(&means),
        mk_means_p: mann_kendall_p_increasing(&means),
        means,
        std_errors,
        mk_batch_s: s,
        mk_batch_z: z,
        mk_batch_p: p,
        ci_strictly_increasing,
        ci_all_overlap,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kolmogorov_q_known_values() {
        // Q(1.36) ~ 0.05, Q(1.63) ~ 0.01
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 5e-4);
    }

    #[test]
    fn ks_same_distribution_passes() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..5000).map(|_| r.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000).map(|_| r.sample(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_one_sample(&a, normal_cdf).p_value > 0.01);
        let c: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
    }

    #[test]
    fn mk_exact_small_n() {
        assert_eq!(mann_kendall_s(&[1.0, 2.0, 3.0]), 3);
        assert!((mann_kendall_p_increasing(&[1.0, 2.0, 3.0]) - 1.0 / 6.0).abs() < 1e-12);
        assert!(
            (mann_kendall_p_increasing(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 1.0 / 120.0).abs() < 1e-12
        );
    }

    #[test]
    fn batch_trend_detects_mean_shift_and_not_noise() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |shift: f64| -> Vec<f64> {
            (0..2000)
                .map(|_| shift + r.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let up = classify_trend(&[draw(0.0), draw(0.2), draw(0.4)], 10, 0.05);
        assert_eq!(up.verdict, TrendVerdict::Increasing);
        let flat = classify_trend(&[draw(5.0), draw(5.0), draw(5.0)], 10, 0.05);
        assert_eq!(flat.verdict, TrendVerdict::Flat);
    }
}
