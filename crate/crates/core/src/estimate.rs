//! Monte Carlo estimates and the replica-parallel runner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Replica mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_replicas: usize,
    /// Relative standard error above 0.5.
    #[serde(default)]
    pub unreliable: bool,
    /// Top 1% of samples carry more than half of the total mass.
    #[serde(default)]
    pub heavy_tail: bool,
}

impl MomentEstimate {
    pub fn exact(value: f64, n_replicas: usize) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_replicas,
            unreliable: false,
            heavy_tail: false,
        }
    }

    /// Sample mean and `sd / sqrt(n)`; sums are compensated and taken in
    /// replica order, so the result does not depend on scheduling.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n > 0, "estimate needs at least one sample");
        let mean = neumaier_sum(samples.iter().copied()) / n as f64;
        let var = if n > 1 {
            neumaier_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64
        } else {
            0.0
        };
        let std_error = (var / n as f64).sqrt();
        let unreliable = mean != 0.0 && std_error / mean.abs() > 0.5;
        Self {
            value: mean,
            std_error,
            n_replicas: n,
            unreliable,
            heavy_tail: top_share(samples, 0.01) > 0.5,
        }
    }

    /// `self - other` with squared errors summed.
    pub fn minus(&self, other: &Self) -> Difference {
        Difference {
            delta: self.value - other.value,
            std_error: self.std_error.hypot(other.std_error),
        }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (
            self.value - 1.96 * self.std_error,
            self.value + 1.96 * self.std_error,
        )
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.std_error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.std_error / self.value.abs()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub delta: f64,
    pub std_error: f64,
}

impl Difference {
    /// `|delta| <= k * se + allowance`.
    pub fn within(&self, k: f64, allowance: f64) -> bool {
        self.delta.abs() <= k * self.std_error + allowance
    }
}

/// Complex-valued estimate; real and imaginary parts averaged separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub re: f64,
    pub im: f64,
    pub std_error: f64,
    pub n_replicas: usize,
}

impl ComplexEstimate {
    pub fn from_samples(samples: &[(f64, f64)]) -> Self {
        let re: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let im: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let a = MomentEstimate::from_samples(&re);
        let b = MomentEstimate::from_samples(&im);
        Self {
            re: a.value,
            im: b.value,
            std_error: a.std_error.hypot(b.std_error),
            n_replicas: samples.len(),
        }
    }

    pub fn distance(&self, other: &Self) -> Difference {
        Difference {
            delta: (self.re - other.re).hypot(self.im - other.im),
            std_error: self.std_error.hypot(other.std_error),
        }
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Share of the total (absolute) mass carried by the largest `frac` of
/// samples.
pub fn top_share(samples: &[f64], frac: f64) -> f64 {
    if samples.len() < 100 {
        return 0.0;
    }
    let mut abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    let total = neumaier_sum(abs.iter().copied());
    if total == 0.0 {
        return 0.0;
    }
    abs.sort_by(|a, b| b.total_cmp(a));
    let k = ((samples.len() as f64 * frac).ceil() as usize).max(1);
    neumaier_sum(abs[..k].iter().copied()) / total
}

/// Worker count from `SBM_WORKERS`, falling back to the rayon default.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("SBM_WORKERS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f(replica)` for `0..n` and returns results in replica order.
pub fn run_replicas<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match workers_from_env() {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("thread pool");
            pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
        }
        None => (0..n as u64).into_par_iter().map(&f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_from_samples() {
        let e = MomentEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.std_error - sd / 2.0).abs() < 1e-15);
        assert_eq!(e.n_replicas, 4);
    }

    #[test]
    fn differences_sum_squared_errors() {
        let a = MomentEstimate {
            value: 1.0,
            std_error: 3.0,
            n_replicas: 10,
            unreliable: false,
            heavy_tail: false,
        };
        let b = MomentEstimate {
            std_error: 4.0,
            ..a
        };
        let d = a.minus(&b);
        assert_eq!(d.delta, 0.0);
        assert_eq!(d.std_error, 5.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1e16, 1.0, -1e16];
        v.extend(std::iter::repeat_n(1e-3, 1000));
        assert!((neumaier_sum(v) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_tail_flag() {
        let mut v = vec![0.001; 999];
        v.push(1000.0);
        assert!(MomentEstimate::from_samples(&v).heavy_tail);
        assert!(!MomentEstimate::from_samples(&vec![1.0; 1000]).heavy_tail);
    }

    #[test]
    fn runner_preserves_order() {
        let v = run_replicas(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }
}
