//! Explicit Euler-Maruyama integration of the symbiotic branching system
//!
//! ```text
//! du = (1/2) u'' dt + sqrt(gamma u v) dW1
//! dv = (1/2) v'' dt + sqrt(gamma u v) dW2,   d<W1, W2> = rho dt
//! ```
//!
//! on a cell-centred grid with discrete white noise of variance `dt / dx` per
//! cell. Near zero the Gaussian increment is either clamped or replaced by a
//! moment-matched two-point law (see [`Positivity`]); any value that still
//! goes negative is clamped and counted. Boundary cells stay at their
//! initial values. Alongside the
//! fields the stepper accumulates `Lambda_t(x) = gamma * int_0^t u_s v_s ds`,
//! the intensity of the quadratic variation of the test martingales.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, MomentEstimate};
use crate::grid::{
    fill_correlated_noise, normal_cdf, pair_field, pair_sampled, sample_fn, FieldPair, HeatKernel,
    ModelParams, Positivity, MOMENT_MATCH_SIGMAS,
};
use crate::rng::{SeedPlan, StreamTag};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub fields: FieldPair,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub record_times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaField {
    pub values: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trajectory: Trajectory,
    pub lambda: LambdaField,
    pub final_state: FieldPair,
    pub clamp_fraction: f64,
}

/// Per-replica integrator state: pinned boundary values, noise buffers and
/// the two noise generators.
pub struct Stepper {
    params: ModelParams,
    dt: f64,
    pinned: [f64; 4],
    xi1: Vec<f64>,
    xi2: Vec<f64>,
    next_u: Vec<f64>,
    next_v: Vec<f64>,
    rng1: ChaCha8Rng,
    rng2: ChaCha8Rng,
    pub clamped: u64,
    pub updated: u64,
    replica: u64,
}

impl Stepper {
    pub fn new(
        params: &ModelParams,
        initial: &FieldPair,
        seeds: SeedPlan,
        replica: u64,
    ) -> Result<Self> {
        params.validate()?;
        let n = params.grid.n_cells;
        if initial.u.len() != n || initial.v.len() != n {
            return Err(SbmError::param("ic", "field length differs from grid"));
        }
        Ok(Self {
            params: *params,
            dt: params.dt,
            pinned: [
                initial.u[0],
                initial.u[n - 1],
                initial.v[0],
                initial.v[n - 1],
            ],
            xi1: vec![0.0; n],
            xi2: vec![0.0; n],
            next_u: vec![0.0; n],
            next_v: vec![0.0; n],
            rng1: seeds.stream(replica, StreamTag::Noise1).rng(),
            rng2: seeds.stream(replica, StreamTag::Noise2).rng(),
            clamped: 0,
            updated: 0,
            replica,
        })
    }

    /// Overrides the step length (must not exceed the configured `dt`).
    pub fn set_dt(&mut self, dt: f64) {
        debug_assert!(dt <= self.params.dt * (1.0 + 1e-12));
        self.dt = dt;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One Euler-Maruyama step in place.
    pub fn step(&mut self, state: &mut FieldPair) -> Result<()> {
        let n = state.u.len();
        let dx = self.params.grid.dx();
        let dt = self.dt;
        let gamma = self.params.gamma;
        let diff = 0.5 * dt / (dx * dx);
        fill_correlated_noise(
            self.params.rho,
            (dt / dx).sqrt(),
            &mut self.rng1,
            &mut self.rng2,
            &mut self.xi1,
            &mut self.xi2,
        );
        let (u, v) = (&state.u, &state.v);
        let scale = (dt / dx).sqrt();
        let mode = self.params.positivity;
        let mut clamped = 0u64;
        for i in 1..n - 1 {
            let sigma = (gamma * u[i].max(0.0) * v[i].max(0.0)).sqrt();
            let mu = u[i] + diff * (u[i - 1] - 2.0 * u[i] + u[i + 1]);
            let mv = v[i] + diff * (v[i - 1] - 2.0 * v[i] + v[i + 1]);
            let (nu, cu) = noise_update(mu, sigma * scale, self.xi1[i] / scale, mode);
            let (nv, cv) = noise_update(mv, sigma * scale, self.xi2[i] / scale, mode);
            clamped += cu as u64 + cv as u64;
            self.next_u[i] = nu;
            self.next_v[i] = nv;
        }
        self.next_u[0] = self.pinned[0];
        self.next_u[n - 1] = self.pinned[1];
        self.next_v[0] = self.pinned[2];
        self.next_v[n - 1] = self.pinned[3];
        std::mem::swap(&mut state.u, &mut self.next_u);
        std::mem::swap(&mut state.v, &mut self.next_v);
        state.t += dt;
        self.clamped += clamped;
        self.updated += 2 * (n as u64 - 2);
        if let Some(cell) = state
            .u
            .iter()
            .zip(&state.v)
            .position(|(a, b)| !(a.is_finite() && b.is_finite()))
        {
            return Err(SbmError::NonFinite {
                replica: self.replica,
                cell,
                t: state.t,
            });
        }
        Ok(())
    }
}

/// Single step from an explicit generator pair; returns the new state and the
/// number of clamped entries.
pub fn em_step(
    state: &FieldPair,
    params: &ModelParams,
    pinned: &FieldPair,
    rng1: &mut impl Rng,
    rng2: &mut impl Rng,
) -> Result<(FieldPair, usize)> {
    params.validate()?;
    let n = state.u.len();
    let dx = params.grid.dx();
    let diff = 0.5 * params.dt / (dx * dx);
    let mut xi1 = vec![0.0; n];
    let mut xi2 = vec![0.0; n];
    fill_correlated_noise(
        params.rho,
        (params.dt / dx).sqrt(),
        rng1,
        rng2,
        &mut xi1,
        &mut xi2,
    );
    let mut next = FieldPair {
        u: pinned.u.clone(),
        v: pinned.v.clone(),
        t: state.t + params.dt,
    };
    let scale = (params.dt / dx).sqrt();
    let mut clamped = 0;
    for i in 1..n - 1 {
        let sigma = (params.gamma * state.u[i].max(0.0) * state.v[i].max(0.0)).sqrt();
        let mu = state.u[i] + diff * (state.u[i - 1] - 2.0 * state.u[i] + state.u[i + 1]);
        let mv = state.v[i] + diff * (state.v[i - 1] - 2.0 * state.v[i] + state.v[i + 1]);
        let (nu, cu) = noise_update(mu, sigma * scale, xi1[i] / scale, params.positivity);
        let (nv, cv) = noise_update(mv, sigma * scale, xi2[i] / scale, params.positivity);
        clamped += cu as usize + cv as usize;
        next.u[i] = nu;
        next.v[i] = nv;
    }
    if let Some(cell) = next
        .u
        .iter()
        .zip(&next.v)
        .position(|(a, b)| !(a.is_finite() && b.is_finite()))
    {
        return Err(SbmError::NonFinite {
            replica: 0,
            cell,
            t: next.t,
        });
    }
    Ok((next, clamped))
}

/// Adds noise of standard deviation `s` driven by the standard normal `g` to
/// the pre-noise value `m`. Returns the new value and whether it was clamped.
#[inline]
pub fn noise_update(m: f64, s: f64, g: f64, mode: Positivity) -> (f64, bool) {
    if mode == Positivity::MomentMatched && m < MOMENT_MATCH_SIGMAS * s {
        if m <= 0.0 {
            return (0.0, false);
        }
        // ratios keep tiny cells clear of underflow
        let r = s / m;
        if r <= 1.0 {
            let s2 = (r * r).ln_1p();
            return (m * (s2.sqrt() * g - 0.5 * s2).exp(), false);
        }
        let p_jump = 1.0 / (1.0 + r * r);
        let x = if normal_cdf(-g) < p_jump {
            m + s * r
        } else {
            0.0
        };
        return (x, false);
    }
    let x = m + s * g;
    if x < 0.0 {
        (0.0, true)
    } else {
        (x, false)
    }
}

/// Step count and effective step so that the horizon is hit exactly.
pub fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    if t_end <= 0.0 {
        return (0, dt);
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    (n, t_end / n as f64)
}

/// Integrates to `t_end`, recording snapshots at the requested times.
///
/// `observe(k, state)` is called before every step `k` with the pre-step
/// state; the Lambda increment of that step is `gamma * u * v * dt` on the
/// same state.
pub fn simulate_with(
    ic: &FieldPair,
    t_end: f64,
    params: &ModelParams,
    seeds: SeedPlan,
    replica: u64,
    record_times: &[f64],
    mut observe: impl FnMut(usize, &FieldPair, f64),
) -> Result<SimOutput> {
    if record_times.iter().any(|&t| t < 0.0 || t > t_end + 1e-12) {
        return Err(SbmError::param("record_times", "must lie in [0, T]"));
    }
    let mut times: Vec<f64> = record_times.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut stepper = Stepper::new(params, ic, seeds, replica)?;
    let (n_steps, dt) = step_plan(t_end, params.dt);
    stepper.set_dt(dt);
    let record_steps: Vec<usize> = times.iter().map(|&t| (t / dt).round() as usize).collect();

    let mut state = ic.clone();
    state.t = 0.0;
    let mut lambda = vec![0.0; ic.len()];
    let mut traj = Trajectory {
        record_times: times.clone(),
        snapshots: Vec::with_capacity(times.len()),
    };
    let mut next_rec = 0;
    let gamma = params.gamma;
    for k in 0..=n_steps {
        while next_rec < record_steps.len() && record_steps[next_rec] == k {
            traj.snapshots.push(Snapshot {
                t: k as f64 * dt,
                fields: FieldPair {
                    t: k as f64 * dt,
                    ..state.clone()
                },
                lambda: lambda.clone(),
            });
            next_rec += 1;
        }
        if k == n_steps {
            break;
        }
        observe(k, &state, dt);
        if gamma > 0.0 {
            for ((l, a), b) in lambda.iter_mut().zip(&state.u).zip(&state.v) {
                *l += gamma * a * b * dt;
            }
        }
        stepper.step(&mut state)?;
        state.t = (k + 1) as f64 * dt;
    }
    let clamp_fraction = if stepper.updated == 0 {
        0.0
    } else {
        stepper.clamped as f64 / stepper.updated as f64
    };
    Ok(SimOutput {
        trajectory: traj,
        lambda: LambdaField {
            values: lambda,
            t: t_end,
        },
        final_state: state,
        clamp_fraction,
    })
}

pub fn simulate(
    ic: &FieldPair,
    t_end: f64,
    params: &ModelParams,
    seeds: SeedPlan,
    replica: u64,
    record_times: &[f64],
) -> Result<SimOutput> {
    simulate_with(
        ic,
        t_end,
        params,
        seeds,
        replica,
        record_times,
        |_, _, _| {},
    )
}

/// Runs `n` independent replicas from the same initial condition and maps
/// each recorded trajectory through `readout`.
pub fn ensemble<T: Send>(
    ic: &FieldPair,
    t_end: f64,
    params: &ModelParams,
    seeds: SeedPlan,
    n: usize,
    record_times: &[f64],
    readout: impl Fn(&SimOutput) -> T + Sync + Send,
) -> Result<Vec<T>> {
    run_replicas(n, |r| {
        simulate(ic, t_end, params, seeds, r, record_times).map(|o| readout(&o))
    })
    .into_iter()
    .collect()
}

/// CSV with columns `t,x,u,v,lambda`, one row per cell per record time.
pub fn write_trajectory_csv(
    out: &mut impl Write,
    traj: &Trajectory,
    params: &ModelParams,
) -> std::io::Result<()> {
    writeln!(out, "t,x,u,v,lambda")?;
    for snap in &traj.snapshots {
        for i in 0..params.grid.n_cells {
            writeln!(
                out,
                "{},{},{},{},{}",
                snap.t,
                params.grid.center(i),
                snap.fields.u[i],
                snap.fields.v[i],
                snap.lambda[i]
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: f64,
    pub width: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        (-0.5 * z * z).exp()
    }
}

/// The default family of test functions for the martingale checks.
pub fn default_test_bumps() -> Vec<GaussianBump> {
    vec![
        GaussianBump {
            center: 0.0,
            width: 0.5,
        },
        GaussianBump {
            center: -1.0,
            width: 0.3,
        },
        GaussianBump {
            center: 1.0,
            width: 0.3,
        },
        GaussianBump {
            center: 0.5,
            width: 1.0,
        },
        GaussianBump {
            center: -0.5,
            width: 0.7,
        },
    ]
}

/// Sample variance with the standard error of the variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub std_error: f64,
}

pub fn sample_variance(x: &[f64]) -> VarianceEstimate {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let d2: Vec<f64> = x.iter().map(|a| (a - m) * (a - m)).collect();
    let var = d2.iter().sum::<f64>() / (n - 1.0);
    let m4 = d2.iter().map(|a| a * a).sum::<f64>() / n;
    VarianceEstimate {
        value: var,
        std_error: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}

/// Sample covariance with a delta-method standard error.
pub fn sample_covariance(x: &[f64], y: &[f64]) -> VarianceEstimate {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let c = prods.iter().sum::<f64>() / (n - 1.0);
    let m = prods.iter().sum::<f64>() / n;
    let v = prods.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n;
    VarianceEstimate {
        value: c,
        std_error: (v / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub bump: GaussianBump,
    pub mean_m: MomentEstimate,
    pub mean_n: MomentEstimate,
    pub var_m: VarianceEstimate,
    pub var_n: VarianceEstimate,
    pub cov_mn: VarianceEstimate,
    pub predicted_var: MomentEstimate,
    /// `Var M / predicted` with a delta-method standard error.
    pub var_ratio: f64,
    pub var_ratio_se: f64,
    pub rho_hat: f64,
    pub rho_hat_se: f64,
    /// Largest `|M_T|` over replicas; exactly the semigroup discretisation
    /// error when `gamma = 0`.
    pub max_abs_m: f64,
}

/// Checks the martingale problem for one or more test functions along a
/// single ensemble started from `ic`.
///
/// `M_T(phi) = <u_T, phi> - <u_0, S_T phi>` (and `N_T` for `v`) must have
/// mean zero, variance `E int_0^T <Lambda(ds), (S_{T-s} phi)^2>` and
/// covariance `rho` times that.
pub fn martingale_check(
    ic: &FieldPair,
    bumps: &[GaussianBump],
    t_end: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<MartingaleReport>> {
    let grid = params.grid;
    let dx = grid.dx();
    let (n_steps, dt) = step_plan(t_end, params.dt);
    let phis: Vec<Vec<f64>> = bumps
        .iter()
        .map(|b| sample_fn(&grid, |x| b.eval(x)))
        .collect();
    // S_{T - s_k} phi for each step, squared.
    let propagated_sq: Vec<Vec<Vec<f64>>> = phis
        .iter()
        .map(|phi| {
            (0..n_steps)
                .map(|k| {
                    let tau = t_end - k as f64 * dt;
                    HeatKernel::new(tau, dx)
                        .apply(phi)
                        .into_iter()
                        .map(|x| x * x)
                        .collect()
                })
                .collect()
        })
        .collect();
    let compensators: Vec<f64> = phis
        .iter()
        .map(|phi| {
            let s_phi = HeatKernel::new(t_end, dx).apply(phi);
            (
                pair_sampled(&ic.u, &s_phi, &grid),
                pair_sampled(&ic.v, &s_phi, &grid),
            )
        })
        .flat_map(|(a, b)| [a, b])
        .collect();

    let gamma = params.gamma;
    let per_replica: Vec<Result<Vec<(f64, f64, f64)>>> = run_replicas(n_replicas, |r| {
        let mut pred = vec![0.0; bumps.len()];
        let out = simulate_with(ic, t_end, params, seeds, r, &[], |k, st, h| {
            if gamma == 0.0 {
                return;
            }
            for (b, p) in pred.iter_mut().enumerate() {
                let w = &propagated_sq[b][k];
                let acc: f64 = w
                    .iter()
                    .zip(&st.u)
                    .zip(&st.v)
                    .map(|((w, u), v)| u * v * w)
                    .sum();
                *p += gamma * acc * h * dx;
            }
        })?;
        let fin = &out.final_state;
        Ok(phis
            .iter()
            .enumerate()
            .map(|(b, phi)| {
                let m = pair_sampled(&fin.u, phi, &grid) - compensators[2 * b];
                let n = pair_sampled(&fin.v, phi, &grid) - compensators[2 * b + 1];
                (m, n, pred[b])
            })
            .collect())
    });
    let per_replica: Vec<Vec<(f64, f64, f64)>> = per_replica.into_iter().collect::<Result<_>>()?;

    Ok(bumps
        .iter()
        .enumerate()
        .map(|(b, bump)| {
            let m: Vec<f64> = per_replica.iter().map(|r| r[b].0).collect();
            let n: Vec<f64> = per_replica.iter().map(|r| r[b].1).collect();
            let p: Vec<f64> = per_replica.iter().map(|r| r[b].2).collect();
            let var_m = sample_variance(&m);
            let var_n = sample_variance(&n);
            let cov = sample_covariance(&m, &n);
            let predicted = MomentEstimate::from_samples(&p);
            let (var_ratio, var_ratio_se) = if predicted.value > 0.0 {
                let r = var_m.value / predicted.value;
                let rel =
                    (var_m.std_error / var_m.value).hypot(predicted.std_error / predicted.value);
                (r, r * rel)
            } else {
                (f64::NAN, f64::NAN)
            };
            let (rho_hat, rho_hat_se) = if var_m.value > 0.0 {
                // Regression slope of N on M; delta-method error from the residuals.
                let r = cov.value / var_m.value;
                let nn = m.len() as f64;
                let mm = m.iter().sum::<f64>() / nn;
                let mn = n.iter().sum::<f64>() / nn;
                let res: f64 = m
                    .iter()
                    .zip(&n)
                    .map(|(a, c)| {
                        let e = (c - mn) - r * (a - mm);
                        e * e
                    })
                    .sum::<f64>()
                    / (nn - 2.0);
                (r, (res / (var_m.value * (nn - 1.0))).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            MartingaleReport {
                bump: *bump,
                mean_m: MomentEstimate::from_samples(&m),
                mean_n: MomentEstimate::from_samples(&n),
                var_m,
                var_n,
                cov_mn: cov,
                predicted_var: predicted,
                var_ratio,
                var_ratio_se,
                rho_hat,
                rho_hat_se,
                max_abs_m: m.iter().fold(0.0f64, |a, x| a.max(x.abs())),
            }
        })
        .collect())
}

/// Sup-norm distance between a simulated field and a reference function on
/// the interior cells at least `margin` away from either boundary.
pub fn sup_error(
    field: &[f64],
    params: &ModelParams,
    reference: impl Fn(f64) -> f64,
    margin: f64,
) -> f64 {
    let g = params.grid;
    (0..g.n_cells)
        .filter(|&i| {
            let x = g.center(i);
            x - g.x_min >= margin && g.x_max - x >= margin
        })
        .map(|i| (field[i] - reference(g.center(i))).abs())
        .fold(0.0, f64::max)
}

/// `<field, phi>` helper for callers holding a closure.
pub fn pairing(field: &[f64], phi: impl Fn(f64) -> f64, params: &ModelParams) -> Result<f64> {
    pair_field(field, phi, &params.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{heat_of_left_step, make_heaviside_ic, GridSpec};
    use crate::rng::RngStream;

    fn heaviside_params(rho: f64, gamma: f64, dx: f64, t: f64) -> ModelParams {
        ModelParams::on_default_domain(rho, gamma, dx, t).unwrap()
    }

    #[test]
    fn heat_limit_matches_normal_cdf() {
        let p = heaviside_params(0.0, 0.0, 0.05, 1.0);
        let ic = make_heaviside_ic(&p.grid);
        let out = simulate(&ic, 1.0, &p, SeedPlan::new(1), 0, &[1.0]).unwrap();
        let u = &out.trajectory.snapshots[0].fields.u;
        let err = sup_error(u, &p, |x| heat_of_left_step(x, 1.0), 0.0);
        assert!(err <= 2.0 * 0.05, "sup error {err}");
        let v = &out.trajectory.snapshots[0].fields.v;
        let err_v = sup_error(v, &p, |x| heat_of_left_step(-x, 1.0), 0.0);
        assert!(err_v <= 2.0 * 0.05);
    }

    #[test]
    fn gaussian_ic_heat_limit() {
        let p = heaviside_params(0.0, 0.0, 0.05, 1.0);
        let ic = FieldPair::from_fns(&p.grid, |x| (-x * x / 2.0).exp(), |_| 0.0);
        let out = simulate(&ic, 1.0, &p, SeedPlan::new(2), 0, &[1.0]).unwrap();
        // S_1 exp(-x^2/2) = exp(-x^2/4) / sqrt(2)
        let err = sup_error(
            &out.final_state.u,
            &p,
            |x| (-x * x / 4.0).exp() / 2f64.sqrt(),
            0.0,
        );
        assert!(err < 0.05 + 1e-3, "{err}");
    }

    #[test]
    fn absorbing_zero_u() {
        let p = heaviside_params(-0.5, 2.0, 0.1, 0.5);
        let ic = FieldPair::from_fns(&p.grid, |_| 0.0, |x| if x > 0.0 { 1.0 } else { 0.0 });
        let noisy = simulate(&ic, 0.5, &p, SeedPlan::new(3), 0, &[]).unwrap();
        let heat = simulate(&ic, 0.5, &p.with_gamma(0.0), SeedPlan::new(9), 0, &[]).unwrap();
        assert!(noisy.final_state.u.iter().all(|&x| x == 0.0));
        assert_eq!(noisy.final_state.v, heat.final_state.v);
        assert!(noisy.lambda.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perfectly_correlated_noise_keeps_equal_fields_equal() {
        let g = GridSpec::new(-3.0, 3.0, 60).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.002, g).unwrap();
        let ic = FieldPair::from_fns(
            &g,
            |x| 1.0 + 0.5 * (-x * x).exp(),
            |x| 1.0 + 0.5 * (-x * x).exp(),
        );
        let out = simulate(&ic, 0.2, &p, SeedPlan::new(4), 0, &[]).unwrap();
        assert_eq!(out.final_state.u, out.final_state.v);
    }

    #[test]
    fn zero_horizon_and_zero_gamma() {
        let p = heaviside_params(-0.8, 1.0, 0.1, 1.0);
        let ic = make_heaviside_ic(&p.grid);
        let out = simulate(&ic, 0.0, &p, SeedPlan::new(5), 0, &[0.0]).unwrap();
        assert_eq!(out.trajectory.snapshots.len(), 1);
        assert_eq!(out.trajectory.snapshots[0].fields.u, ic.u);
        assert!(out.lambda.values.iter().all(|&x| x == 0.0));
        let out = simulate(
            &ic,
            1.0,
            &p.with_gamma(0.0),
            SeedPlan::new(5),
            0,
            &[0.5, 1.0],
        )
        .unwrap();
        assert!(out.lambda.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lambda_is_monotone_across_records() {
        let p = heaviside_params(-0.8, 1.0, 0.1, 1.0);
        let ic = make_heaviside_ic(&p.grid);
        let out = simulate(&ic, 1.0, &p, SeedPlan::new(6), 0, &[0.25, 0.5, 1.0]).unwrap();
        let s = &out.trajectory.snapshots;
        assert_eq!(s.len(), 3);
        for w in s.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[0].lambda.iter().zip(&w[1].lambda).all(|(a, b)| b >= a));
        }
        assert!(s[2].lambda.iter().any(|&x| x > 0.0));
    }

    #[test]
    fn clamp_fraction_regression() {
        let p = heaviside_params(-0.8, 1.0, 0.05, 1.0);
        let ic = make_heaviside_ic(&p.grid);
        let out = simulate(&ic, 1.0, &p, SeedPlan::new(7), 0, &[]).unwrap();
        assert!(out.clamp_fraction < 0.05, "{}", out.clamp_fraction);
        assert!(out
            .final_state
            .u
            .iter()
            .chain(&out.final_state.v)
            .all(|&x| x >= 0.0));
    }

    #[test]
    fn clamp_fraction_falls_under_refinement() {
        let fracs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dx| {
                let p = heaviside_params(-0.8, 1.0, dx, 0.5).with_positivity(Positivity::Clamp);
                let ic = make_heaviside_ic(&p.grid);
                simulate(&ic, 0.5, &p, SeedPlan::new(3), 0, &[])
                    .unwrap()
                    .clamp_fraction
            })
            .collect();
        assert!(fracs[0] > fracs[1] && fracs[1] > fracs[2], "{fracs:?}");
        assert!(fracs[2] > 0.0);
    }

    #[test]
    fn moment_matched_update_keeps_mean_and_variance() {
        let n = 200_000;
        let mut rng = SeedPlan::new(4).stream(0, StreamTag::Aux).rng();
        let gs: Vec<f64> = (0..n)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        // two-point, lognormal and Gaussian regimes
        for (m, s) in [(0.02, 0.05), (0.1, 0.05), (0.3, 0.05)] {
            let xs: Vec<f64> = gs
                .iter()
                .map(|&g| noise_update(m, s, g, Positivity::MomentMatched).0)
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            assert!(xs.iter().all(|&x| x >= 0.0));
            assert!((mean - m).abs() < 4.0 * s / (n as f64).sqrt(), "{m} {mean}");
            assert!((var / (s * s) - 1.0).abs() < 0.05, "{m} {var}");
        }
        let two_point = (0.02f64 * 0.02 + 0.05 * 0.05) / 0.02;
        assert!(gs.iter().all(|&g| {
            let x = noise_update(0.02, 0.05, g, Positivity::MomentMatched).0;
            x == 0.0 || (x - two_point).abs() < 1e-15
        }));
        // far from zero the plain Gaussian increment is used
        assert_eq!(
            noise_update(1.0, 0.1, -0.5, Positivity::MomentMatched),
            (0.95, false)
        );
        assert_eq!(noise_update(0.1, 0.1, -2.0, Positivity::Clamp), (0.0, true));
        assert_eq!(
            noise_update(0.0, 0.0, 1.0, Positivity::MomentMatched),
            (0.0, false)
        );
        for (m, s) in [
            (1e-200, 1e-190),
            (1e-200, 1e-201),
            (1e-310, 1e-300),
            (1e-300, 1.0),
        ] {
            for g in [-8.0, 0.0, 8.0] {
                assert!(noise_update(m, s, g, Positivity::MomentMatched)
                    .0
                    .is_finite());
            }
        }
    }

    #[test]
    fn em_step_matches_stepper() {
        let p = heaviside_params(-0.3, 1.0, 0.1, 0.1);
        let ic = FieldPair::from_fns(&p.grid, |x| 1.0 / (1.0 + x * x), |x| (-x * x).exp());
        let seeds = SeedPlan::new(8);
        let mut st = Stepper::new(&p, &ic, seeds, 0).unwrap();
        let mut a = ic.clone();
        st.step(&mut a).unwrap();
        let mut r1 = RngStream::new(8, 0, StreamTag::Noise1).rng();
        let mut r2 = RngStream::new(8, 0, StreamTag::Noise2).rng();
        let (b, _) = em_step(&ic, &p, &ic, &mut r1, &mut r2).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn cfl_violation_rejected() {
        let g = GridSpec::new(-1.0, 1.0, 20).unwrap();
        let mut p = ModelParams::new(0.0, 1.0, 0.001, g).unwrap();
        p.dt = 0.1;
        let ic = make_heaviside_ic(&g);
        assert!(matches!(
            simulate(&ic, 1.0, &p, SeedPlan::new(1), 0, &[]),
            Err(SbmError::Cfl { .. })
        ));
    }

    #[test]
    fn record_times_outside_horizon_rejected() {
        let p = heaviside_params(0.0, 1.0, 0.1, 1.0);
        let ic = make_heaviside_ic(&p.grid);
        assert!(simulate(&ic, 1.0, &p, SeedPlan::new(1), 0, &[1.5]).is_err());
    }

    #[test]
    fn no_noise_martingale_vanishes() {
        let p = heaviside_params(-0.8, 0.0, 0.05, 0.5);
        let ic = make_heaviside_ic(&p.grid);
        let reps =
            martingale_check(&ic, &default_test_bumps(), 0.5, &p, 2, SeedPlan::new(3)).unwrap();
        let bound = 2.0 * 0.05 * 1.0 * p.grid.width();
        for r in reps {
            assert!(r.max_abs_m <= bound, "{}", r.max_abs_m);
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let g = GridSpec::new(-1.0, 1.0, 4).unwrap();
        let p = ModelParams::new(0.0, 0.0, 0.01, g).unwrap();
        let ic = make_heaviside_ic(&g);
        let out = simulate(&ic, 0.02, &p, SeedPlan::new(1), 0, &[0.0, 0.02]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &out.trajectory, &p).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,x,u,v,lambda");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert_eq!(lines[1], "0,-0.75,1,0,0");
    }
}
