//! Brownian local-time toolkit.
//!
//! Local time at zero of a motion started at `z` has the law of `M_t^+`, the
//! positive part of the running maximum of a motion started at `-|z|`; by the
//! reflection principle `M_t = -|z| + sqrt(t) |N|` in law. Where a check only
//! needs the law of `L_t` this exact representation is used; the band
//! estimator on discretised paths appears only where it is itself under test.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::estimate::{run_replicas, MomentEstimate};
use crate::grid::normal_cdf;
use crate::quad::integrate_to_infinity;
use crate::rng::{SeedPlan, StreamTag};
use crate::stats::{ks_one_sample, ks_p, ks_two_sample};

/// Collision local time of two independent motions started `z` apart is
/// `scale * L^0_t(B)` for a standard motion `B` started at distance
/// `level = |z| / sqrt(2)`; returns `(level, scale)`.
pub fn collision_reduction(z: f64) -> (f64, f64) {
    (
        z.abs() / std::f64::consts::SQRT_2,
        std::f64::consts::FRAC_1_SQRT_2,
    )
}

/// `P(M_t^+ = 0)` for the maximum of a motion started at `-level`.
pub fn max_plus_atom(level: f64, t: f64) -> f64 {
    2.0 * normal_cdf(level.abs() / t.sqrt()) - 1.0
}

/// Density of `M_t^+` on `(0, inf)`.
pub fn max_plus_density(m: f64, level: f64, t: f64) -> f64 {
    let st = t.sqrt();
    let z = (m + level.abs()) / st;
    2.0 * (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * st)
}

/// Exact draw of `L^0_t` for a motion started at `z`.
pub fn sample_local_time(z: f64, t: f64, rng: &mut impl Rng) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    (t.sqrt() * g.abs() - z.abs()).max(0.0)
}

/// Exact draw of the collision local time of two motions started `z` apart.
pub fn sample_collision_local_time(z: f64, t: f64, rng: &mut impl Rng) -> f64 {
    let (level, scale) = collision_reduction(z);
    scale * sample_local_time(level, t, rng)
}

/// Band local time at `0` of one discretised path.
pub fn band_local_time(start: f64, t: f64, dt: f64, eps: f64, rng: &mut impl Rng) -> f64 {
    let steps = (t / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let sd = h.sqrt();
    let inc = h / (2.0 * eps);
    let mut x = start;
    let mut l = 0.0;
    for _ in 0..steps {
        let g: f64 = rng.sample(StandardNormal);
        x += sd * g;
        if x.abs() <= eps {
            l += inc;
        }
    }
    l
}

/// Running maximum of a discretised path, with the maximum of each step
/// drawn from the Brownian bridge between its endpoints.
pub fn bridge_running_max(start: f64, t: f64, dt: f64, rng: &mut impl Rng) -> f64 {
    let steps = (t / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let sd = h.sqrt();
    let mut x = start;
    let mut m = start;
    for _ in 0..steps {
        let g: f64 = rng.sample(StandardNormal);
        let u: f64 = 1.0 - rng.random::<f64>();
        let y = x + sd * g;
        let d = y - x;
        m = m.max(0.5 * (x + y + (d * d - 2.0 * h * u.ln()).sqrt()));
        x = y;
    }
    m
}

/// Upper bound on the KS distance between the laws of `L^a_t` and `L^0_t`
/// over `|a| <= eps`, for a motion started at `z`. Band local time averages
/// over exactly these levels.
pub fn band_ks_allowance(z: f64, t: f64, eps: f64) -> f64 {
    let st = t.sqrt();
    let c = z.abs();
    let near = (c - eps).max(0.0);
    let below = normal_cdf(c / st) - normal_cdf(near / st);
    let above = normal_cdf((c + eps) / st) - normal_cdf(c / st);
    2.0 * below.max(above)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyReport {
    pub z: f64,
    pub t: f64,
    pub n_samples: usize,
    pub ks_stat: f64,
    pub p_value: f64,
    /// KS distance attributed to the band width, subtracted before the
    /// adjusted p-values are taken.
    pub band_allowance: f64,
    pub adjusted_p_value: f64,
    /// At `z = 0`: one-sample KS of the band local time against `|N(0, t)|`,
    /// after the allowance.
    pub abs_gaussian_p: Option<f64>,
    pub pass: bool,
}

/// Two-sample KS between band local time at `0` of a path from `z` and the
/// positive running maximum of an independent path from `-|z|`.
pub fn levy_identity_check(
    z: f64,
    t: f64,
    n_samples: usize,
    dt: f64,
    eps: f64,
    seeds: SeedPlan,
) -> LevyReport {
    let pairs: Vec<(f64, f64)> = run_replicas(n_samples, |r| {
        let mut a = seeds.stream(r, StreamTag::Particles).rng();
        let mut b = seeds.stream(r, StreamTag::Aux).rng();
        let l = band_local_time(z, t, dt, eps, &mut a);
        let m = bridge_running_max(-z.abs(), t, dt, &mut b);
        (l, m.max(0.0))
    });
    let l: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let m: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ks = ks_two_sample(&l, &m);
    let allowance = band_ks_allowance(z, t, eps);
    let n = n_samples as f64;
    let adjusted_p_value = ks_p((ks.statistic - allowance).max(0.0), n / 2.0);
    let abs_gaussian_p = (z == 0.0).then(|| {
        let one = ks_one_sample(&l, |x| (2.0 * normal_cdf(x / t.sqrt()) - 1.0).max(0.0));
        ks_p((one.statistic - allowance).max(0.0), n)
    });
    let pass = adjusted_p_value > 0.01 && abs_gaussian_p.is_none_or(|p| p > 0.01);
    LevyReport {
        z,
        t,
        n_samples,
        ks_stat: ks.statistic,
        p_value: ks.p_value,
        band_allowance: allowance,
        adjusted_p_value,
        abs_gaussian_p,
        pass,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub z: f64,
    pub alpha: f64,
    pub t: f64,
    pub empirical_p: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

fn binomial(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// `P_z(L^0_t <= alpha log t)` by exact sampling against
/// `sqrt(2/pi) (alpha log t + |z|) / sqrt(t)`.
pub fn local_time_tail_check(
    z: f64,
    alpha: f64,
    t: f64,
    n_samples: usize,
    seeds: SeedPlan,
) -> TailReport {
    assert!(t >= 1.0 && alpha > 0.0);
    let level = alpha * t.ln();
    let hits = run_replicas(n_samples, |r| {
        let mut rng = seeds.stream(r, StreamTag::Aux).rng();
        (sample_local_time(z, t, &mut rng) <= level) as usize
    })
    .into_iter()
    .sum();
    let (p, se) = binomial(hits, n_samples);
    let bound = (2.0 / std::f64::consts::PI).sqrt() * (level + z.abs()) / t.sqrt();
    TailReport {
        z,
        alpha,
        t,
        empirical_p: p,
        std_error: se,
        bound,
        pass: p <= bound + 3.0 * se,
    }
}

/// `P(L^{1,2}_t <= alpha log t)` for motions started `z` apart, by exact
/// sampling.
pub fn collision_tail_exact_check(
    z: f64,
    alpha: f64,
    t: f64,
    n_samples: usize,
    seeds: SeedPlan,
) -> TailReport {
    assert!(t >= 1.0 && alpha > 0.0);
    let samples = run_replicas(n_samples, |r| {
        let mut rng = seeds.stream(r, StreamTag::Aux).rng();
        sample_collision_local_time(z, t, &mut rng)
    });
    collision_tail_report(&samples, z, alpha, t)
}

/// Band collision local time at horizon `t` of two independent discretised
/// motions started at `x` and `y`.
pub fn collision_local_time_samples(
    x: f64,
    y: f64,
    t: f64,
    dt: f64,
    eps: f64,
    n_samples: usize,
    seeds: SeedPlan,
) -> Vec<f64> {
    run_replicas(n_samples, |r| {
        let mut rng = seeds.stream(r, StreamTag::Particles).rng();
        // Both motions are simulated to keep the estimator literal.
        let steps = (t / dt - 1e-9).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let sd = h.sqrt();
        let inc = h / (2.0 * eps);
        let (mut a, mut b, mut l) = (x, y, 0.0);
        for _ in 0..steps {
            let ga: f64 = rng.sample(StandardNormal);
            let gb: f64 = rng.sample(StandardNormal);
            a += sd * ga;
            b += sd * gb;
            if (a - b).abs() <= eps {
                l += inc;
            }
        }
        l
    })
}

/// Tail report for collision local-time samples of motions started `z`
/// apart, against `(2 alpha log t + |z|) / sqrt(pi t)`.
pub fn collision_tail_report(samples: &[f64], z: f64, alpha: f64, t: f64) -> TailReport {
    let level = alpha * t.ln();
    let hits = samples.iter().filter(|&&l| l <= level).count();
    let (p, se) = binomial(hits, samples.len());
    let bound = (2.0 * level + z.abs()) / (std::f64::consts::PI * t).sqrt();
    TailReport {
        z,
        alpha,
        t,
        empirical_p: p,
        std_error: se,
        bound,
        pass: p <= bound + 3.0 * se,
    }
}

/// Two-motion version: `P_{x,y}(L^{1,2}_t <= alpha log t)` from band local
/// time on discretised paths.
#[allow(clippy::too_many_arguments)]
pub fn collision_tail_check(
    x: f64,
    y: f64,
    alpha: f64,
    t: f64,
    dt: f64,
    eps: f64,
    n_samples: usize,
    seeds: SeedPlan,
) -> TailReport {
    assert!(t >= 1.0 && alpha > 0.0);
    let samples = collision_local_time_samples(x, y, t, dt, eps, n_samples, seeds);
    collision_tail_report(&samples, y - x, alpha, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub lhs: f64,
    pub rhs: f64,
    /// Path average of `|lhs - rhs| / |lhs|` over paths with `lhs != 0`.
    pub rel_err: f64,
    pub pass: bool,
}

/// Occupation-times formula for `X = B^2 - B^1`:
/// `sum_s h(X_s, s) dt` against `sum_z sum_s h(z, s) dL^z_s dz` with band
/// local times on a level grid of spacing `2 eps` over `[-z_max, z_max]`.
pub fn occupation_formula_check(
    h: &(dyn Fn(f64, f64) -> f64 + Sync),
    t: f64,
    dt: f64,
    eps: f64,
    z_max: f64,
    n_samples: usize,
    seeds: SeedPlan,
) -> OccupationReport {
    let dz = 2.0 * eps;
    let n_levels = (2.0 * z_max / dz).round() as usize;
    let levels: Vec<f64> = (0..n_levels)
        .map(|k| -z_max + (k as f64 + 0.5) * dz)
        .collect();
    let per_path: Vec<(f64, f64)> = run_replicas(n_samples, |r| {
        let mut rng = seeds.stream(r, StreamTag::Particles).rng();
        let steps = (t / dt - 1e-9).ceil().max(1.0) as usize;
        let step = t / steps as f64;
        let sd = step.sqrt();
        let inc = step / (2.0 * eps);
        let (mut a, mut b) = (0.0f64, 0.0f64);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for k in 0..steps {
            let ga: f64 = rng.sample(StandardNormal);
            let gb: f64 = rng.sample(StandardNormal);
            a += sd * ga;
            b += sd * gb;
            let s = (k + 1) as f64 * step;
            let x = b - a;
            lhs += h(x, s) * step;
            // Only levels within eps of x receive local time.
            let lo = ((x - eps + z_max) / dz - 0.5).ceil().max(0.0) as usize;
            let hi = (((x + eps + z_max) / dz - 0.5).floor() as isize).min(n_levels as isize - 1);
            if hi >= lo as isize {
                for z in &levels[lo..=hi as usize] {
                    if (x - z).abs() <= eps {
                        rhs += h(*z, s) * inc * dz;
                    }
                }
            }
        }
        (lhs, rhs)
    });
    let lhs = per_path.iter().map(|p| p.0).sum::<f64>() / n_samples as f64;
    let rhs = per_path.iter().map(|p| p.1).sum::<f64>() / n_samples as f64;
    let rels: Vec<f64> = per_path
        .iter()
        .filter(|p| p.0 != 0.0)
        .map(|p| (p.0 - p.1).abs() / p.0.abs())
        .collect();
    let rel_err = if rels.is_empty() {
        0.0
    } else {
        rels.iter().sum::<f64>() / rels.len() as f64
    };
    OccupationReport {
        lhs,
        rhs,
        rel_err,
        pass: rel_err <= 0.05,
    }
}

/// `E_0[exp(-s |B_t|)]` by quadrature.
pub fn abs_gaussian_laplace(s: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let st = t.sqrt();
    2.0 * integrate_to_infinity(
        |y| (-(y * y) / 2.0 - s * st * y).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        0.0,
        1e-15,
        1e-12,
    )
    .value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint {
    pub t: f64,
    pub quadrature: f64,
    pub sampled: MomentEstimate,
    pub envelope: f64,
    pub agrees: bool,
    pub within_envelope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub s: f64,
    pub constant: f64,
    pub points: Vec<LaplacePoint>,
    pub pass: bool,
}

/// Compares `E_0[exp(-s L^0_t)]` from exact local-time draws with the
/// quadrature of `E_0[exp(-s |B_t|)]`, and checks both against
/// `C (1 ^ t^{-1/2})`.
///
/// `sqrt(t) E_0[exp(-s|B_t|)]` increases towards `sqrt(2/pi) / s`, so the
/// envelope constant is `max(1, sqrt(2/pi) / s)`.
pub fn laplace_bound_check(
    s: f64,
    t_list: &[f64],
    n_samples: usize,
    seeds: SeedPlan,
) -> LaplaceReport {
    let constant = 1.0f64.max((2.0 / std::f64::consts::PI).sqrt() / s);
    let points: Vec<LaplacePoint> = t_list
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let seeds = seeds.child(&format!("t{k}"));
            let draws = run_replicas(n_samples, |r| {
                let mut rng = seeds.stream(r, StreamTag::Aux).rng();
                (-s * sample_local_time(0.0, t, &mut rng)).exp()
            });
            let sampled = MomentEstimate::from_samples(&draws);
            let quadrature = abs_gaussian_laplace(s, t);
            let envelope = constant * 1.0f64.min(1.0 / t.sqrt());
            LaplacePoint {
                t,
                quadrature,
                sampled,
                envelope,
                agrees: (sampled.value - quadrature).abs() <= 3.0 * sampled.std_error,
                within_envelope: quadrature <= envelope
                    && sampled.value <= envelope + 3.0 * sampled.std_error,
            }
        })
        .collect();
    LaplaceReport {
        s,
        constant,
        pass: points.iter().all(|p| p.agrees && p.within_envelope),
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_maximum_matches_reflection_principle() {
        let (z, t, n) = (0.7, 2.0, 40_000);
        let seeds = SeedPlan::new(21);
        let draws: Vec<f64> = run_replicas(n, |r| {
            let mut rng = seeds.stream(r, StreamTag::Aux).rng();
            sample_local_time(z, t, &mut rng)
        });
        for a in [0.0, 0.2, 0.5, 1.0, 2.0] {
            let p = draws.iter().filter(|&&m| m >= a && m > 0.0).count() as f64 / n as f64;
            let exact = 2.0 * normal_cdf(-(a + z) / t.sqrt());
            let se = (exact * (1.0 - exact) / n as f64).sqrt();
            assert!(
                (p - exact).abs() <= 3.0 * se + 1e-12,
                "a={a}: {p} vs {exact}"
            );
        }
    }

    #[test]
    fn atom_and_density_integrate_to_one() {
        let (level, t) = (0.4, 1.3);
        let mass = max_plus_atom(level, t)
            + integrate_to_infinity(|m| max_plus_density(m, level, t), 0.0, 1e-14, 1e-12).value;
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn far_start_gives_zero_local_time() {
        let r = levy_identity_check(10.0, 1.0, 500, 1e-3, 0.06, SeedPlan::new(2));
        assert_eq!(r.ks_stat, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn bridge_maximum_is_exact_on_a_coarse_grid() {
        let (t, n) = (1.0, 20_000);
        let seeds = SeedPlan::new(6);
        let draws: Vec<f64> = run_replicas(n, |r| {
            let mut rng = seeds.stream(r, StreamTag::Aux).rng();
            bridge_running_max(0.0, t, 0.1, &mut rng)
        });
        let ks = ks_one_sample(&draws, |m| 2.0 * normal_cdf(m / t.sqrt()) - 1.0);
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn band_allowance_shape() {
        assert!((band_ks_allowance(0.0, 1.0, 0.02) - (2.0 * normal_cdf(0.02) - 1.0)).abs() < 1e-15);
        assert!(band_ks_allowance(1.0, 1.0, 0.02) < band_ks_allowance(0.0, 1.0, 0.02));
        assert!(band_ks_allowance(8.0, 1.0, 0.02) < 1e-12);
    }

    #[test]
    fn exact_collision_tail_at_unit_horizon_is_the_no_meeting_probability() {
        // at t = 1 the level is 0, so the tail is P(no meeting)
        let r = collision_tail_exact_check(1.0, 1.0, 1.0, 40_000, SeedPlan::new(7));
        let exact = max_plus_atom(collision_reduction(1.0).0, 1.0);
        assert!((r.empirical_p - exact).abs() <= 3.0 * r.std_error, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn tail_bound_example_value() {
        let r = local_time_tail_check(0.0, 1.0, std::f64::consts::E, 20_000, SeedPlan::new(3));
        assert!((r.bound - 0.4839).abs() < 1e-4, "{}", r.bound);
        assert!(r.pass);
    }

    #[test]
    fn tail_probability_vanishes_for_small_alpha() {
        let r = local_time_tail_check(0.0, 1e-9, 4.0, 10_000, SeedPlan::new(4));
        assert!(r.empirical_p < 1e-3);
    }

    #[test]
    fn occupation_identity_for_band_indicator() {
        // Levels tile [-1, 1] exactly, so each step is counted once.
        let eps = 0.02;
        let h = |z: f64, _s: f64| if z.abs() <= 1.0 { 1.0 } else { 0.0 };
        let r = occupation_formula_check(&h, 0.5, 1e-3, eps, 1.0, 50, SeedPlan::new(5));
        assert!((r.lhs - r.rhs).abs() < 1e-9 * r.lhs.max(1.0), "{r:?}");
        let zero = |_: f64, _: f64| 0.0;
        let r = occupation_formula_check(&zero, 0.5, 1e-3, eps, 1.0, 5, SeedPlan::new(5));
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn quadrature_matches_closed_form() {
        // E[e^{-s|B_t|}] = 2 e^{s^2 t/2} Phi(-s sqrt t)
        for &(s, t) in &[(1.0, 1.0), (0.3, 4.0), (2.0, 0.25)] {
            let exact = 2.0 * (s * s * t / 2.0f64).exp() * normal_cdf(-s * f64::sqrt(t));
            assert!((abs_gaussian_laplace(s, t) - exact).abs() < 1e-10);
        }
        assert!((abs_gaussian_laplace(1e-12, 1.0) - 1.0).abs() < 1e-9);
        assert!((abs_gaussian_laplace(1.0, 1e-12) - 1.0).abs() < 1e-5);
    }
}
