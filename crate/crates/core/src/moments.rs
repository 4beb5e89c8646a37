//! Field-side moment estimators, the critical curve and the integrated
//! fourth-moment functionals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::brownian::{collision_reduction, max_plus_atom, max_plus_density};
use crate::dual::{moment_samples, Colour, DualConfig, DualQuery, EstimatorKind};
use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, MomentEstimate};
use crate::grid::{make_constant_ic, FieldPair, GridSpec, ModelParams};
use crate::quad::integrate_to_infinity;
use crate::rng::SeedPlan;
use crate::spde::simulate;
use crate::stats::{classify_trend, TrendReport, TrendVerdict};

/// `rho(p) = -cos(pi / p)`, the correlation at which the `p`-th moment
/// stops being bounded.
pub fn critical_rho(p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(SbmError::param("p", "critical curve needs p > 1"));
    }
    Ok(-(PI / p).cos())
}

/// `p(rho) = pi / arccos(-rho)`.
pub fn critical_p(rho: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(SbmError::param("rho", "critical curve needs |rho| < 1"));
    }
    Ok(PI / (-rho).acos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    U,
    V,
}

/// Field value of one species at the cell nearest to each point.
pub fn point_product(state: &FieldPair, cells: &[(usize, Species)]) -> f64 {
    cells
        .iter()
        .map(|&(i, s)| match s {
            Species::U => state.u[i],
            Species::V => state.v[i],
        })
        .product()
}

/// Resolves query points to cells; points must keep a distance of at least
/// 2 from either end of the domain.
pub fn resolve_points(grid: &GridSpec, points: &[(f64, Species)]) -> Result<Vec<(usize, Species)>> {
    points
        .iter()
        .map(|&(x, s)| {
            if !(x - grid.x_min >= 2.0 && grid.x_max - x >= 2.0) {
                return Err(SbmError::OutOfDomain {
                    x,
                    lo: grid.x_min + 2.0,
                    hi: grid.x_max - 2.0,
                });
            }
            Ok((grid.nearest_index(x)?, s))
        })
        .collect()
}

pub fn spde_mixed_samples(
    ic: &FieldPair,
    points: &[(f64, Species)],
    t: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<f64>> {
    let cells = resolve_points(&params.grid, points)?;
    run_replicas(n_replicas, |r| {
        let out = simulate(ic, t, params, seeds, r, &[])?;
        Ok(point_product(&out.final_state, &cells))
    })
    .into_iter()
    .collect()
}

/// `E[prod_k w_k(T, x_k)]` with `w_k` either `u` or `v`.
pub fn spde_mixed_moment(
    ic: &FieldPair,
    points: &[(f64, Species)],
    t: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<MomentEstimate> {
    Ok(MomentEstimate::from_samples(&spde_mixed_samples(
        ic, points, t, params, n_replicas, seeds,
    )?))
}

/// `E[exp(theta L_t^{1,2})]` for two motions started `z` apart, any real
/// `theta`.
pub fn collision_exp_moment(theta: f64, z: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let (level, scale) = collision_reduction(z);
    max_plus_atom(level, t)
        + integrate_to_infinity(
            |m| (theta * scale * m).exp() * max_plus_density(m, level, t),
            0.0,
            1e-14,
            1e-11,
        )
        .value
}

/// `E[u_t(x)^2]` under constant-one initial data, from the two-particle
/// dual: before the switch the pair collects `e^{gamma L}`, after it
/// `e^{gamma rho L}`, which integrates to `1 + (E e^{gamma rho L} - 1) / rho`.
pub fn constant_ic_second_moment(rho: f64, gamma: f64, t: f64) -> f64 {
    if gamma == 0.0 || t <= 0.0 {
        return 1.0;
    }
    if rho.abs() < 1e-12 {
        let (level, scale) = collision_reduction(0.0);
        let mean_l = integrate_to_infinity(
            |m| scale * m * max_plus_density(m, level, t),
            0.0,
            1e-14,
            1e-11,
        )
        .value;
        return 1.0 + gamma * mean_l;
    }
    1.0 + (collision_exp_moment(gamma * rho, 0.0, t) - 1.0) / rho
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub dx: f64,
    pub dual_dt: f64,
    pub n_spde: usize,
    pub n_dual: usize,
    pub n_batches: usize,
    pub alpha: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            dx: 0.1,
            dual_dt: 1e-3,
            n_spde: 2000,
            n_dual: 20000,
            n_batches: 10,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub p: u32,
    pub rho: f64,
    pub gamma: f64,
    pub critical_rho: f64,
    pub t_list: Vec<f64>,
    pub spde: Vec<MomentEstimate>,
    pub dual: Vec<MomentEstimate>,
    /// Exact values from the two-particle dual (`p = 2` only).
    pub exact: Option<Vec<f64>>,
    pub spde_trend: TrendReport,
    pub dual_trend: TrendReport,
    pub clamp_fraction: Vec<f64>,
}

/// `E_{1,1}[u_T(0)^p]` at each horizon from constant-one initial data.
///
/// Every horizon gets its own ensemble (and its own default domain), so the
/// trend test compares independent samples. The dual side places `p`
/// colour-1 particles at the origin.
pub fn boundedness_probe(
    p: u32,
    rho: f64,
    gamma: f64,
    t_list: &[f64],
    settings: &ProbeSettings,
    seeds: SeedPlan,
) -> Result<BoundednessReport> {
    if p != 2 && p != 4 {
        return Err(SbmError::param("p", "probe supports p = 2 or p = 4"));
    }
    let one = |_: f64| 1.0;
    let mut spde_groups = Vec::new();
    let mut dual_groups = Vec::new();
    let mut clamp_fraction = Vec::new();
    for &t in t_list {
        let params = ModelParams::on_default_domain(rho, gamma, settings.dx, t)?;
        let ic = make_constant_ic(&params.grid, 1.0);
        let cell = params.grid.nearest_index(0.0)?;
        let s = seeds.child(&format!("spde-{t}"));
        let rows: Vec<Result<(f64, f64)>> = run_replicas(settings.n_spde, |r| {
            let out = simulate(&ic, t, &params, s, r, &[])?;
            Ok((out.final_state.u[cell].powi(p as i32), out.clamp_fraction))
        });
        let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
        clamp_fraction.push(rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64);
        spde_groups.push(rows.into_iter().map(|r| r.0).collect::<Vec<_>>());

        let q = DualQuery {
            positions: vec![0.0; p as usize],
            colours: vec![Colour::One; p as usize],
            u0: &one,
            v0: &one,
            t,
            kind: EstimatorKind::ProductMoment,
        };
        let cfg = DualConfig::with_dt(settings.dual_dt);
        dual_groups.push(moment_samples(
            &q,
            gamma,
            rho,
            &cfg,
            settings.n_dual,
            seeds.child(&format!("dual-{t}")),
        )?);
    }
    let spde_trend = classify_trend(&spde_groups, settings.n_batches, settings.alpha);
    let dual_trend = classify_trend(&dual_groups, settings.n_batches, settings.alpha);
    Ok(BoundednessReport {
        p,
        rho,
        gamma,
        critical_rho: critical_rho(p as f64)?,
        t_list: t_list.to_vec(),
        spde: spde_groups
            .iter()
            .map(|g| MomentEstimate::from_samples(g))
            .collect(),
        dual: dual_groups
            .iter()
            .map(|g| MomentEstimate::from_samples(g))
            .collect(),
        exact: (p == 2).then(|| {
            t_list
                .iter()
                .map(|&t| constant_ic_second_moment(rho, gamma, t))
                .collect()
        }),
        spde_trend,
        dual_trend,
        clamp_fraction,
    })
}

/// `int u v dx` on the grid.
pub fn overlap_mass(state: &FieldPair, grid: &GridSpec) -> f64 {
    state
        .u
        .iter()
        .zip(&state.v)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * grid.dx()
}

/// `int int u(x) u(y) v(x) v(y) dx dy`, which factorises as `(int u v)^2`.
pub fn integrated_fourth_sample(state: &FieldPair, grid: &GridSpec) -> f64 {
    let m = overlap_mass(state, grid);
    m * m
}

/// Shift in cells for a separation `z` that must be a grid multiple.
pub fn shift_cells(z: f64, grid: &GridSpec) -> Result<usize> {
    let k = z / grid.dx();
    if !(z >= 0.0) || (k - k.round()).abs() > 1e-6 {
        return Err(SbmError::param(
            "z",
            "separation must be a nonnegative multiple of dx",
        ));
    }
    Ok(k.round() as usize)
}

/// `int u(x) u(x - z) v(x) v(x - z) dx`.
pub fn z_resolved_fourth(state: &FieldPair, grid: &GridSpec, z: f64) -> Result<f64> {
    let k = shift_cells(z, grid)?;
    let (u, v) = (&state.u, &state.v);
    let mut acc = 0.0;
    for i in k..u.len() {
        acc += u[i] * u[i - k] * v[i] * v[i - k];
    }
    Ok(acc * grid.dx())
}

/// `I_q = int int |x - y|^q u(x) v(x) u(y) v(y) dx dy`.
pub fn i_q(state: &FieldPair, grid: &GridSpec, q: f64) -> f64 {
    let dx = grid.dx();
    let occupied: Vec<(f64, f64)> = state
        .u
        .iter()
        .zip(&state.v)
        .enumerate()
        .filter(|(_, (a, b))| **a * **b > 0.0)
        .map(|(i, (a, b))| (grid.center(i), a * b))
        .collect();
    let mut acc = 0.0;
    for (i, &(x, w)) in occupied.iter().enumerate() {
        for &(y, w2) in &occupied[i + 1..] {
            acc += 2.0 * (x - y).abs().powf(q) * w * w2;
        }
    }
    acc * dx * dx
}

/// Replica samples of a per-state functional at each horizon of one
/// ensemble; row `k` holds horizon `t_list[k]`.
pub fn functional_samples(
    ic: &FieldPair,
    t_list: &[f64],
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
    f: impl Fn(&FieldPair) -> Result<f64> + Sync + Send,
) -> Result<Vec<Vec<f64>>> {
    let t_end = t_list.iter().cloned().fold(0.0, f64::max);
    let rows: Vec<Result<Vec<f64>>> = run_replicas(n_replicas, |r| {
        let out = simulate(ic, t_end, params, seeds, r, t_list)?;
        t_list
            .iter()
            .map(|&t| {
                let snap = out
                    .trajectory
                    .snapshots
                    .iter()
                    .find(|s| (s.t - t).abs() <= 0.5 * params.dt + 1e-12)
                    .expect("record time present");
                f(&snap.fields)
            })
            .collect()
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    Ok((0..t_list.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect())
}

/// `E[(int u_T v_T dx)^2]` at each horizon.
pub fn integrated_fourth(
    ic: &FieldPair,
    t_list: &[f64],
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<MomentEstimate>> {
    let g = params.grid;
    Ok(
        functional_samples(ic, t_list, params, n_replicas, seeds, |s| {
            Ok(integrated_fourth_sample(s, &g))
        })?
        .iter()
        .map(|s| MomentEstimate::from_samples(s))
        .collect(),
    )
}

/// `E[I_q(T)]`. Quadratic in the number of occupied cells.
pub fn i_q_moment(
    ic: &FieldPair,
    q: f64,
    t: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<MomentEstimate> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SbmError::param("q", "must lie in (0, 1)"));
    }
    if params.grid.n_cells > 2000 {
        eprintln!(
            "warning: I_q on {} cells costs O(n^2) per replica",
            params.grid.n_cells
        );
    }
    let g = params.grid;
    let rows = functional_samples(ic, &[t], params, n_replicas, seeds, |s| Ok(i_q(s, &g, q)))?;
    Ok(MomentEstimate::from_samples(&rows[0]))
}

/// Trend over independent ensembles, one per horizon, each on its own
/// default domain.
#[allow(clippy::too_many_arguments)]
pub fn horizon_trend(
    t_list: &[f64],
    rho: f64,
    gamma: f64,
    dx: f64,
    n_replicas: usize,
    n_batches: usize,
    seeds: SeedPlan,
    ic: impl Fn(&GridSpec) -> FieldPair,
    f: impl Fn(&FieldPair, &GridSpec) -> Result<f64> + Sync + Send + Copy,
) -> Result<TrendReport> {
    let mut groups = Vec::new();
    for &t in t_list {
        let params = ModelParams::on_default_domain(rho, gamma, dx, t)?;
        let g = params.grid;
        let rows = functional_samples(
            &ic(&g),
            &[t],
            &params,
            n_replicas,
            seeds.child(&format!("horizon-{t}")),
            move |s| f(s, &g),
        )?;
        groups.extend(rows);
    }
    Ok(classify_trend(&groups, n_batches, 0.05))
}

/// Result record for the moment experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub op: String,
    pub params: serde_json::Value,
    #[serde(rename = "T")]
    pub t: f64,
    pub value: f64,
    pub std_error: f64,
    pub trend_verdict: Option<TrendVerdict>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::collision_laplace_oracle;
    use crate::grid::make_heaviside_ic;

    #[test]
    fn critical_curve_values() {
        assert!(critical_rho(2.0).unwrap().abs() < 1e-15);
        assert!((critical_rho(4.0).unwrap() + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((critical_rho(1e9).unwrap() + 1.0).abs() < 1e-12);
        assert!(critical_rho(1.0).is_err());
        assert!(critical_rho(0.5).is_err());
        assert!(critical_p(1.0).is_err());
    }

    #[test]
    fn critical_curve_inverse_and_monotone() {
        // p(rho) falls from infinity at rho = -1 to 1 at rho = 1.
        let mut prev = f64::INFINITY;
        for k in 0..=1998 {
            let rho = -0.999 + k as f64 * 0.001;
            let p = critical_p(rho).unwrap();
            assert!(p < prev);
            prev = p;
            assert!((critical_rho(p).unwrap() - rho).abs() < 1e-12, "{rho}");
        }
    }

    #[test]
    fn mixed_moment_at_time_zero() {
        let p = ModelParams::on_default_domain(-0.8, 1.0, 0.1, 1.0).unwrap();
        let ic = make_heaviside_ic(&p.grid);
        let e = spde_mixed_moment(
            &ic,
            &[(-1.0, Species::U), (1.0, Species::V)],
            0.0,
            &p,
            4,
            SeedPlan::new(0),
        )
        .unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.std_error, 0.0);
        let far = spde_mixed_moment(
            &ic,
            &[(p.grid.x_max - 1.0, Species::U)],
            0.0,
            &p,
            1,
            SeedPlan::new(0),
        );
        assert!(matches!(far, Err(SbmError::OutOfDomain { .. })));
    }

    #[test]
    fn exp_moment_matches_laplace_oracle() {
        for &(s, z, t) in &[(0.5, 0.0, 1.0), (0.8, 1.0, 1.0)] {
            let a = collision_exp_moment(-s, z, t);
            let b = collision_laplace_oracle(s, z, t).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_ic_second_moment_is_continuous_in_rho() {
        let at0 = constant_ic_second_moment(0.0, 1.0, 1.0);
        let lo = constant_ic_second_moment(-1e-5, 1.0, 1.0);
        let hi = constant_ic_second_moment(1e-5, 1.0, 1.0);
        assert!((at0 - lo).abs() < 1e-4 && (at0 - hi).abs() < 1e-4);
        // Below the curve the moment increases towards 1 + 1/|rho|.
        let vals: Vec<f64> = [1.0, 2.0, 4.0, 400.0]
            .iter()
            .map(|&t| constant_ic_second_moment(-0.5, 1.0, t))
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(vals[3] < 3.0);
    }

    #[test]
    fn gamma_zero_constant_moment_is_one() {
        let settings = ProbeSettings {
            dx: 0.2,
            dual_dt: 1e-2,
            n_spde: 20,
            n_dual: 200,
            ..Default::default()
        };
        let r =
            boundedness_probe(2, -0.5, 0.0, &[0.5, 1.0, 2.0], &settings, SeedPlan::new(2)).unwrap();
        for e in r.spde.iter().chain(&r.dual) {
            assert!((e.value - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.exact.unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn fourth_moment_identities() {
        let n = 1200;
        let g = GridSpec::new(-3.0, 3.0, n).unwrap();
        let s = FieldPair::from_fns(
            &g,
            |x| (-(x - 0.3) * (x - 0.3)).exp(),
            |x| 1.0 / (1.0 + x * x),
        );
        let direct: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| s.u[i] * s.u[j] * s.v[i] * s.v[j])
            .sum::<f64>()
            * g.dx()
            * g.dx();
        assert!((integrated_fourth_sample(&s, &g) - direct).abs() < 1e-12 * direct);
        let diag: f64 = (0..n).map(|i| (s.u[i] * s.v[i] * g.dx()).powi(2)).sum();
        let small_q = i_q(&s, &g, 1e-3);
        assert!((small_q - direct).abs() <= 0.01 * direct);
        assert!((i_q(&s, &g, 1e-12) - (direct - diag)).abs() < 1e-9 * direct);
        assert!(
            (z_resolved_fourth(&s, &g, 0.0).unwrap()
                - (0..n).map(|i| (s.u[i] * s.v[i]).powi(2)).sum::<f64>() * g.dx())
            .abs()
                < 1e-14
        );
        assert!(z_resolved_fourth(&s, &g, 0.0025).is_err());
    }

    #[test]
    fn heaviside_fourth_moments_vanish_at_zero() {
        let p = ModelParams::on_default_domain(-0.8, 1.0, 0.1, 1.0).unwrap();
        let ic = make_heaviside_ic(&p.grid);
        let e = integrated_fourth(&ic, &[0.0], &p, 4, SeedPlan::new(1)).unwrap();
        assert_eq!(e[0].value, 0.0);
        let iq = i_q_moment(&ic, 0.5, 0.0, &p, 4, SeedPlan::new(1)).unwrap();
        assert_eq!(iq.value, 0.0);
    }

    #[test]
    fn small_q_matches_integrated_fourth() {
        let p = ModelParams::on_default_domain(-0.8, 1.0, 0.1, 0.5).unwrap();
        let ic = make_heaviside_ic(&p.grid);
        let a = integrated_fourth(&ic, &[0.5], &p, 16, SeedPlan::new(9)).unwrap()[0];
        let b = i_q_moment(&ic, 1e-3, 0.5, &p, 16, SeedPlan::new(9)).unwrap();
        // the excluded diagonal carries a few percent of the mass at dx = 0.1
        assert!(b.value < a.value);
        assert!(
            (a.value - b.value).abs() <= 0.1 * a.value,
            "{} {}",
            a.value,
            b.value
        );
    }
}
