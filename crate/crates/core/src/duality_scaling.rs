//! Self-duality function, separation of types and the diffusive scaling
//! property.
//!
//! ```text
//! <<mu, nu, phi, psi>>_rho = -sqrt(1 - rho) <mu + nu, phi + psi>
//!                            + i sqrt(1 + rho) <mu - nu, phi - psi>
//! F(mu, nu, phi, psi) = exp(<<mu, nu, phi, psi>>_rho)
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dual::{two_motion_no_collision_samples, DualConfig};
use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, ComplexEstimate, Difference, MomentEstimate};
use crate::grid::{
    default_half_width, make_heaviside_ic, pair_sampled, FieldPair, GridSpec, HeatKernel,
    ModelParams,
};
use crate::interface::approx_interface;
use crate::rng::{SeedPlan, StreamTag};
use crate::spde::simulate;

/// `<<mu, nu, phi, psi>>_rho` for grid fields.
pub fn duality_pairing(
    mu: &[f64],
    nu: &[f64],
    phi: &[f64],
    psi: &[f64],
    rho: f64,
    grid: &GridSpec,
) -> Result<Complex64> {
    if !(rho.abs() < 1.0) {
        return Err(SbmError::param("rho", "pairing needs |rho| < 1"));
    }
    let n = grid.n_cells;
    if [mu.len(), nu.len(), phi.len(), psi.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(SbmError::param("field", "length differs from grid"));
    }
    if phi
        .iter()
        .chain(psi)
        .chain(mu)
        .chain(nu)
        .any(|x| !x.is_finite())
    {
        return Err(SbmError::param("field", "non-finite value"));
    }
    let sum: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a + b).collect();
    let diff: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a - b).collect();
    let tsum: Vec<f64> = phi.iter().zip(psi).map(|(a, b)| a + b).collect();
    let tdiff: Vec<f64> = phi.iter().zip(psi).map(|(a, b)| a - b).collect();
    Ok(Complex64::new(
        -(1.0 - rho).sqrt() * pair_sampled(&sum, &tsum, grid),
        (1.0 + rho).sqrt() * pair_sampled(&diff, &tdiff, grid),
    ))
}

/// `F(mu, nu, phi, psi) = exp(<<mu, nu, phi, psi>>_rho)`.
pub fn self_duality_fn(
    mu: &[f64],
    nu: &[f64],
    phi: &[f64],
    psi: &[f64],
    rho: f64,
    grid: &GridSpec,
) -> Result<Complex64> {
    Ok(duality_pairing(mu, nu, phi, psi, rho, grid)?.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDualityReport {
    pub t: f64,
    pub dx: f64,
    pub lhs: ComplexEstimate,
    pub rhs: ComplexEstimate,
    pub residual: Difference,
    pub allowance: f64,
    /// Largest `|F|` seen on any sample.
    pub max_abs_f: f64,
    pub pass: bool,
}

/// Two-ensemble test of `E[F(u_T, v_T, u~_0, v~_0)] = E[F(u_0, v_0, u~_T, v~_T)]`
/// with `(u_0, v_0) = ic1` and `(u~_0, v~_0) = ic2`.
#[allow(clippy::too_many_arguments)]
pub fn self_duality_check(
    ic1: &FieldPair,
    ic2: &FieldPair,
    t: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
    allowance: f64,
) -> Result<SelfDualityReport> {
    if !(params.rho < 0.0) {
        return Err(SbmError::param("rho", "self-duality check needs rho < 0"));
    }
    let n = params.grid.n_cells;
    for f in [&ic2.u, &ic2.v] {
        if f[0].abs() > 1e-12 || f[n - 1].abs() > 1e-12 {
            return Err(SbmError::param(
                "ic2",
                "must decay below 1e-12 at the boundary",
            ));
        }
    }
    let grid = params.grid;
    let rho = params.rho;
    let lhs_s = seeds.child("self-duality-lhs");
    let rhs_s = seeds.child("self-duality-rhs");
    let lhs: Vec<Result<Complex64>> = run_replicas(n_replicas, |r| {
        let fin = simulate(ic1, t, params, lhs_s, r, &[])?.final_state;
        self_duality_fn(&fin.u, &fin.v, &ic2.u, &ic2.v, rho, &grid)
    });
    let rhs: Vec<Result<Complex64>> = run_replicas(n_replicas, |r| {
        let fin = simulate(ic2, t, params, rhs_s, r, &[])?.final_state;
        self_duality_fn(&ic1.u, &ic1.v, &fin.u, &fin.v, rho, &grid)
    });
    let lhs: Vec<Complex64> = lhs.into_iter().collect::<Result<_>>()?;
    let rhs: Vec<Complex64> = rhs.into_iter().collect::<Result<_>>()?;
    let max_abs_f = lhs.iter().chain(&rhs).map(|z| z.norm()).fold(0.0, f64::max);
    let as_pairs = |v: &[Complex64]| v.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>();
    let lhs = ComplexEstimate::from_samples(&as_pairs(&lhs));
    let rhs = ComplexEstimate::from_samples(&as_pairs(&rhs));
    let residual = lhs.distance(&rhs);
    Ok(SelfDualityReport {
        t,
        dx: grid.dx(),
        pass: residual.within(3.0, allowance),
        lhs,
        rhs,
        residual,
        allowance,
        max_abs_f,
    })
}

/// Offset Gaussian densities `(N(-c, s^2), N(c, s^2))`.
pub fn offset_gaussians(grid: &GridSpec, c: f64, sigma: f64) -> FieldPair {
    FieldPair::from_fns(
        grid,
        |x| crate::grid::gaussian_pdf(x, -c, sigma),
        |x| crate::grid::gaussian_pdf(x, c, sigma),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationPoint {
    pub eps: f64,
    pub x: f64,
    pub estimate: MomentEstimate,
    /// `S_{T+eps} u_0(x) S_{T+eps} v_0(x)`.
    pub ceiling: f64,
    /// `iint p_eps p_eps E[u_0(B^1_T) v_0(B^2_T) 1{L^{1,2}_T = 0}]`, the
    /// infinite-rate value; finite rates with `rho < 0` sit above it.
    pub limit: MomentEstimate,
    pub below_ceiling: bool,
}

/// `E[S_eps u_T(x) S_eps v_T(x)]` over a grid of `(eps, x)` from Heaviside
/// initial data, all read off one ensemble.
#[allow(clippy::too_many_arguments)]
pub fn separation_probe(
    eps_list: &[f64],
    x_list: &[f64],
    t: f64,
    params: &ModelParams,
    n_replicas: usize,
    n_dual: usize,
    dual_dt: f64,
    seeds: SeedPlan,
) -> Result<Vec<SeparationPoint>> {
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(SbmError::param("eps", "must be positive"));
    }
    let grid = params.grid;
    let ic = make_heaviside_ic(&grid);
    let cells: Vec<usize> = x_list
        .iter()
        .map(|&x| grid.nearest_index(x))
        .collect::<Result<_>>()?;
    let kernels: Vec<HeatKernel> = eps_list
        .iter()
        .map(|&e| HeatKernel::new(e, grid.dx()))
        .collect();
    let sim_seeds = seeds.child("separation-spde");
    let rows: Vec<Result<Vec<f64>>> = run_replicas(n_replicas, |r| {
        let fin = simulate(&ic, t, params, sim_seeds, r, &[])?.final_state;
        let mut out = Vec::with_capacity(kernels.len() * cells.len());
        for k in &kernels {
            for &c in &cells {
                out.push(k.apply_at(&fin.u, c) * k.apply_at(&fin.v, c));
            }
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;

    let left = |x: f64| if x < 0.0 { 1.0 } else { 0.0 };
    let right = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
    let cfg = DualConfig::with_dt(dual_dt);
    let mut points = Vec::new();
    for (ke, &eps) in eps_list.iter().enumerate() {
        let ceiling_kernel = HeatKernel::new(t + eps, grid.dx());
        for (kx, &c) in cells.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[ke * cells.len() + kx]).collect();
            let estimate = MomentEstimate::from_samples(&col);
            let ceiling = ceiling_kernel.apply_at(&ic.u, c) * ceiling_kernel.apply_at(&ic.v, c);
            let x = grid.center(c);
            let start_seeds = seeds.child(&format!("separation-starts-{eps}-{kx}"));
            let starts: Vec<(f64, f64)> = (0..n_dual as u64)
                .map(|r| {
                    let mut rng = start_seeds.stream(r, StreamTag::Aux).rng();
                    let a: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                    let b: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                    (x + eps.sqrt() * a, x + eps.sqrt() * b)
                })
                .collect();
            let lim = two_motion_no_collision_samples(
                &starts,
                t,
                &left,
                &right,
                &cfg,
                seeds.child(&format!("separation-dual-{eps}-{kx}")),
            );
            points.push(SeparationPoint {
                eps,
                x,
                below_ceiling: estimate.value <= ceiling + 3.0 * estimate.std_error,
                estimate,
                ceiling,
                limit: MomentEstimate::from_samples(&lim),
            });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingComparison {
    pub label: String,
    /// Rate `gamma` at horizon `K^2 T`, read at `K x` (or width / K).
    pub scaled: MomentEstimate,
    /// Rate `K gamma` at horizon `T`, read at `x`.
    pub direct: MomentEstimate,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub k: f64,
    pub t: f64,
    pub gamma: f64,
    pub rho: f64,
    pub dx_scaled: f64,
    pub dx_direct: f64,
    pub comparisons: Vec<ScalingComparison>,
    pub pass: bool,
}

/// Checks `(u, v)^{gamma}_{K^2 t}(K x) = (u, v)^{K gamma}_t(x)` in law from
/// Heaviside data.
///
/// The direct ensemble runs at rate `K gamma` on spacing `dx / K`; the scaled
/// ensemble runs at rate `gamma` on spacing `dx`, time step `K^2` times larger
/// and a domain `K` times wider, so that cell `i` of one grid is the image
/// of cell `i` of the other. Compared are `E[u v]` at the given point pairs
/// and `E[width^{1/2}]` with the overlap mass scaled by `K`.
#[allow(clippy::too_many_arguments)]
pub fn scaling_equivalence_check(
    k: f64,
    t: f64,
    gamma: f64,
    rho: f64,
    dx: f64,
    point_pairs: &[(f64, f64)],
    eps: f64,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<ScalingReport> {
    if !(k >= 1.0) {
        return Err(SbmError::param("K", "scale factor must be at least 1"));
    }
    let dx_b = dx / k;
    let dt_b = 0.25 * dx_b * dx_b;
    if gamma * k > 0.0 && dt_b > 0.1 / (k * gamma) {
        return Err(SbmError::param(
            "dt",
            "time step too coarse for rate K gamma",
        ));
    }
    let n_half = (default_half_width(t, k * gamma) / dx_b).ceil();
    let w_b = n_half * dx_b;
    let direct = ModelParams::new(rho, k * gamma, dt_b, GridSpec::symmetric(w_b, dx_b)?)?;
    let scaled = ModelParams::new(rho, gamma, k * k * dt_b, GridSpec::symmetric(k * w_b, dx)?)?;
    debug_assert_eq!(direct.grid.n_cells, scaled.grid.n_cells);

    let cells: Vec<(usize, usize)> = point_pairs
        .iter()
        .map(|&(x, y)| Ok((direct.grid.nearest_index(x)?, direct.grid.nearest_index(y)?)))
        .collect::<Result<_>>()?;
    let readout = |p: &ModelParams,
                   horizon: f64,
                   eps_mass: f64,
                   scale: f64,
                   s: SeedPlan|
     -> Result<Vec<Vec<f64>>> {
        let ic = make_heaviside_ic(&p.grid);
        let rows: Vec<Result<Vec<f64>>> = run_replicas(n_replicas, |r| {
            let fin = simulate(&ic, horizon, p, s, r, &[])?.final_state;
            let mut out: Vec<f64> = cells.iter().map(|&(i, j)| fin.u[i] * fin.v[j]).collect();
            let w = approx_interface(&fin, &p.grid, eps_mass, 0.0)?.width;
            out.push((w / scale).sqrt());
            Ok(out)
        });
        rows.into_iter().collect()
    };
    let a = readout(
        &scaled,
        k * k * t,
        k * eps,
        k,
        seeds.child("scaling-scaled"),
    )?;
    let b = readout(&direct, t, eps, 1.0, seeds.child("scaling-direct"))?;
    let mut labels: Vec<String> = point_pairs
        .iter()
        .map(|(x, y)| format!("u(x={x})v(y={y})"))
        .collect();
    labels.push("width^0.5".into());
    let comparisons: Vec<ScalingComparison> = labels
        .into_iter()
        .enumerate()
        .map(|(c, label)| {
            let ea = MomentEstimate::from_samples(&a.iter().map(|r| r[c]).collect::<Vec<_>>());
            let eb = MomentEstimate::from_samples(&b.iter().map(|r| r[c]).collect::<Vec<_>>());
            ScalingComparison {
                label,
                pass: ea.minus(&eb).within(3.0, 1e-12),
                scaled: ea,
                direct: eb,
            }
        })
        .collect();
    Ok(ScalingReport {
        k,
        t,
        gamma,
        rho,
        dx_scaled: dx,
        dx_direct: dx_b,
        pass: comparisons.iter().all(|c| c.pass),
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{heat_of_left_step, make_heaviside_ic, sample_fn};

    fn grid() -> GridSpec {
        GridSpec::new(-4.0, 4.0, 160).unwrap()
    }

    #[test]
    fn zero_test_functions_give_one() {
        let g = grid();
        let ic = make_heaviside_ic(&g);
        let z = vec![0.0; g.n_cells];
        let f = self_duality_fn(&ic.u, &ic.v, &z, &z, -0.5, &g).unwrap();
        assert_eq!(f, Complex64::new(1.0, 0.0));
        assert!(duality_pairing(&ic.u, &ic.v, &z, &z, 1.0, &g).is_err());
        assert!(duality_pairing(&ic.u, &ic.v, &z, &z, -1.0, &g).is_err());
    }

    #[test]
    fn symmetric_inputs_are_real() {
        let g = grid();
        let mu = sample_fn(&g, |x| (-x * x).exp());
        let phi = sample_fn(&g, |x| 1.0 / (1.0 + x * x));
        let rho = -0.3;
        let p = duality_pairing(&mu, &mu, &phi, &phi, rho, &g).unwrap();
        assert_eq!(p.im, 0.0);
        let direct = pair_sampled(&mu, &phi, &g);
        assert!((p.re + 4.0 * (1.0 - rho).sqrt() * direct).abs() < 1e-12);
    }

    #[test]
    fn three_cell_hand_computation() {
        // dx = 1, mu = (0, 1, 0), nu = 0, phi = psi = 1, rho = 0:
        // real -<mu, 2> = -2, imaginary <mu, 0> = 0.
        let g = GridSpec::new(-1.5, 1.5, 3).unwrap();
        let mu = [0.0, 1.0, 0.0];
        let nu = [0.0; 3];
        let one = [1.0; 3];
        let p = duality_pairing(&mu, &nu, &one, &one, 0.0, &g).unwrap();
        assert_eq!(p, Complex64::new(-2.0, 0.0));
        // phi = (0, 1, 0), psi = 0: real -1, imaginary +1.
        let phi = [0.0, 1.0, 0.0];
        let p = duality_pairing(&mu, &nu, &phi, &nu, 0.0, &g).unwrap();
        assert_eq!(p, Complex64::new(-1.0, 1.0));
    }

    #[test]
    fn time_zero_sides_agree_and_f_is_bounded() {
        let p = ModelParams::on_default_domain(-0.8, 1.0, 0.1, 0.5).unwrap();
        let ic1 = make_heaviside_ic(&p.grid);
        let ic2 = offset_gaussians(&p.grid, 1.0, 0.5);
        let r = self_duality_check(&ic1, &ic2, 0.0, &p, 4, SeedPlan::new(1), 0.0).unwrap();
        assert_eq!(r.lhs.re, r.rhs.re);
        assert_eq!(r.lhs.im, r.rhs.im);
        assert!(r.max_abs_f <= 1.0);
        let zero = FieldPair {
            u: vec![0.0; p.grid.n_cells],
            v: vec![0.0; p.grid.n_cells],
            t: 0.0,
        };
        let r = self_duality_check(&ic1, &zero, 0.3, &p, 8, SeedPlan::new(1), 0.0).unwrap();
        assert_eq!(
            (r.lhs.re, r.lhs.im, r.rhs.re, r.rhs.im),
            (1.0, 0.0, 1.0, 0.0)
        );
    }

    #[test]
    fn self_duality_rejects_nonnegative_rho() {
        let p = ModelParams::on_default_domain(0.2, 1.0, 0.1, 0.5).unwrap();
        let ic1 = make_heaviside_ic(&p.grid);
        let ic2 = offset_gaussians(&p.grid, 1.0, 0.5);
        assert!(self_duality_check(&ic1, &ic2, 0.1, &p, 2, SeedPlan::new(1), 0.0).is_err());
    }

    #[test]
    fn separation_ceiling_at_origin_is_a_quarter() {
        let p = ModelParams::on_default_domain(-0.8, 1.0, 0.05, 0.5).unwrap();
        let pts =
            separation_probe(&[0.1], &[0.0], 0.5, &p, 16, 200, 1e-2, SeedPlan::new(4)).unwrap();
        // Snapped to the cell centre at -dx/2.
        let x = pts[0].x;
        let exact = heat_of_left_step(x, 0.6) * heat_of_left_step(-x, 0.6);
        assert!((pts[0].ceiling - exact).abs() < 1e-3);
        assert!((exact - 0.25).abs() < 1e-3);
        assert!(pts[0].below_ceiling);
        assert!(pts[0].limit.value <= pts[0].estimate.value);
    }

    #[test]
    fn scaling_without_branching_is_deterministic() {
        let r = scaling_equivalence_check(
            4.0,
            0.25,
            0.0,
            -0.8,
            0.2,
            &[(0.0, 0.0), (-0.25, 0.25)],
            0.05,
            2,
            SeedPlan::new(1),
        )
        .unwrap();
        for c in &r.comparisons {
            assert_eq!(c.scaled.std_error, 0.0);
            assert!(
                (c.scaled.value - c.direct.value).abs() < 1e-12,
                "{}",
                c.label
            );
        }
        assert!(r.pass);
        // Both agree with the heat solution.
        let x = -0.025;
        let expect = heat_of_left_step(x, 0.25) * heat_of_left_step(-x, 0.25);
        assert!((r.comparisons[0].direct.value - expect).abs() < 0.02);
    }

    #[test]
    fn unit_scale_is_the_same_system() {
        let r = scaling_equivalence_check(
            1.0,
            0.25,
            1.0,
            -0.8,
            0.1,
            &[(0.0, 0.0)],
            0.05,
            200,
            SeedPlan::new(3),
        )
        .unwrap();
        assert_eq!(r.dx_scaled, r.dx_direct);
        assert!(r.pass);
    }
}
