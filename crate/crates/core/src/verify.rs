//! Acceptance suite: one entry per criterion with the measured value, the
//! tolerance and a three-way verdict.
//!
//! A check is `inconclusive` when its standard error exceeds the precision
//! the tolerance needs; `pass` and `fail` are only issued at adequate power.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::brownian::{
    collision_local_time_samples, collision_tail_exact_check, collision_tail_report,
    laplace_bound_check, levy_identity_check, local_time_tail_check, occupation_formula_check,
};
use crate::dual::{
    collision_laplace_oracle, extrapolated_estimate, two_motion_samples, Colour, DualConfig,
    DualQuery, EstimatorKind,
};
use crate::duality_scaling::{
    offset_gaussians, scaling_equivalence_check, self_duality_check, separation_probe,
};
use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, Difference, MomentEstimate};
use crate::grid::{heat_of_left_step, make_heaviside_ic, ModelParams};
use crate::interface::approx_interface;
use crate::moments::{
    boundedness_probe, integrated_fourth_sample, z_resolved_fourth, ProbeSettings,
};
use crate::rng::SeedPlan;
use crate::spde::{default_test_bumps, martingale_check, simulate, sup_error};
use crate::stats::{classify_trend, TrendVerdict};

pub const DEFAULT_SEED: u64 = 20_140_527;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn combine(items: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut out = Verdict::Pass;
        for v in items {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass => {}
            }
        }
        out
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl Check {
    /// `measured <= tolerance`, no sampling error involved.
    fn bound(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            verdict: Verdict::from_bool(measured <= tolerance),
        }
    }

    /// `|delta| <= k se + allowance`, inconclusive when `se > max_se`.
    fn agreement(
        name: impl Into<String>,
        d: Difference,
        k: f64,
        allowance: f64,
        max_se: f64,
    ) -> Self {
        let tolerance = k * d.std_error + allowance;
        let verdict = if !(d.std_error <= max_se) {
            Verdict::Inconclusive
        } else {
            Verdict::from_bool(d.delta.abs() <= tolerance)
        };
        Self {
            name: name.into(),
            measured: d.delta.abs(),
            tolerance,
            verdict,
        }
    }

    /// Boolean outcome of a compound statistical test.
    fn flag(name: impl Into<String>, verdict: Verdict, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub suite: Suite,
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl Criterion {
    fn new(id: u32, name: &str, suite: Suite, checks: Vec<Check>, details: Value) -> Self {
        Self {
            id,
            name: name.into(),
            suite,
            verdict: Verdict::combine(checks.iter().map(|c| c.verdict)),
            checks,
            details,
        }
    }

    /// One-line summary.
    pub fn summary(&self) -> String {
        let worst = self
            .checks
            .iter()
            .find(|c| c.verdict == self.verdict)
            .or(self.checks.first());
        let detail = worst.map_or(String::new(), |c| {
            format!(
                " [{}: measured {:.4e}, tolerance {:.4e}]",
                c.name, c.measured, c.tolerance
            )
        });
        format!(
            "criterion {:>2} {:<34} {:?}{}",
            self.id, self.name, self.verdict, detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Heat,
    Duality,
    Martingale,
    Interface,
    Curve,
    Selfdual,
    Scaling,
    Brownian,
    All,
}

impl FromStr for Suite {
    type Err = SbmError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "heat" => Suite::Heat,
            "duality" => Suite::Duality,
            "martingale" => Suite::Martingale,
            "interface" => Suite::Interface,
            "curve" => Suite::Curve,
            "selfdual" => Suite::Selfdual,
            "scaling" => Suite::Scaling,
            "brownian" => Suite::Brownian,
            "all" => Suite::All,
            other => return Err(SbmError::Config(format!("unknown suite '{other}'"))),
        })
    }
}

/// Criteria in each suite.
pub fn suite_criteria(suite: Suite) -> Vec<u32> {
    match suite {
        Suite::Heat => vec![1],
        Suite::Duality => vec![2, 3, 9],
        Suite::Martingale => vec![4],
        Suite::Selfdual => vec![5],
        Suite::Scaling => vec![6],
        Suite::Curve => vec![7],
        Suite::Interface => vec![8],
        Suite::Brownian => vec![10],
        Suite::All => (1..=10).collect(),
    }
}

fn suite_of(id: u32) -> Suite {
    match id {
        1 => Suite::Heat,
        2 | 3 | 9 => Suite::Duality,
        4 => Suite::Martingale,
        5 => Suite::Selfdual,
        6 => Suite::Scaling,
        7 => Suite::Curve,
        8 => Suite::Interface,
        _ => Suite::Brownian,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides every ensemble size.
    pub replicas: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            replicas: None,
        }
    }
}

impl VerifyOptions {
    fn n(&self, default: usize) -> usize {
        self.replicas.unwrap_or(default).max(2)
    }

    fn seeds(&self, id: u32) -> SeedPlan {
        SeedPlan::new(self.seed).child(&format!("criterion-{id}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub replicas: Option<usize>,
    pub verdict: Verdict,
    pub criteria: Vec<Criterion>,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let criteria = suite_criteria(suite)
        .into_iter()
        .map(|id| run_criterion(id, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        suite,
        seed: opts.seed,
        replicas: opts.replicas,
        verdict: Verdict::combine(criteria.iter().map(|c| c.verdict)),
        criteria,
    })
}

pub fn run_criterion(id: u32, opts: &VerifyOptions) -> Result<Criterion> {
    match id {
        1 => heat(opts),
        2 => second_moment_duality(opts),
        3 => local_time_oracle(opts),
        4 => martingale(opts),
        5 => self_duality(opts),
        6 => scaling(opts),
        7 => critical_curve(opts),
        8 => fourth_moment_and_width(opts),
        9 => separation(opts),
        10 => brownian(opts),
        _ => Err(SbmError::Config(format!("no criterion {id}"))),
    }
}

fn left(x: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        0.0
    }
}

fn right(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn one(_: f64) -> f64 {
    1.0
}

fn heat(_opts: &VerifyOptions) -> Result<Criterion> {
    let dx = 0.05;
    let t = 1.0;
    let params = ModelParams::on_default_domain(0.0, 0.0, dx, t)?;
    let ic = make_heaviside_ic(&params.grid);
    let out = simulate(&ic, t, &params, SeedPlan::new(0), 0, &[])?;
    let eu = sup_error(
        &out.final_state.u,
        &params,
        |x| heat_of_left_step(x, t),
        0.0,
    );
    let ev = sup_error(
        &out.final_state.v,
        &params,
        |x| heat_of_left_step(-x, t),
        0.0,
    );
    Ok(Criterion::new(
        1,
        "heat oracle",
        suite_of(1),
        vec![
            Check::bound("sup error u", eu, 2.0 * dx),
            Check::bound("sup error v", ev, 2.0 * dx),
        ],
        json!({"dx": dx, "dt": params.dt, "t": t, "n_cells": params.grid.n_cells}),
    ))
}

fn second_moment_duality(opts: &VerifyOptions) -> Result<Criterion> {
    let (rho, gamma, t, dx) = (-0.8, 1.0, 0.5, 0.05);
    let n = opts.n(4000);
    let seeds = opts.seeds(2);
    let params = ModelParams::on_default_domain(rho, gamma, dx, t)?;
    let grid = params.grid;
    let ic = make_heaviside_ic(&grid);
    let pairs = [(0.0, 0.0), (-0.5, 0.5)];
    let cells: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(x, y)| Ok((grid.nearest_index(x)?, grid.nearest_index(y)?)))
        .collect::<Result<_>>()?;
    let spde_seeds = seeds.child("spde");
    let rows: Vec<Result<Vec<f64>>> = run_replicas(n, |r| {
        let fin = simulate(&ic, t, &params, spde_seeds, r, &[])?.final_state;
        Ok(cells.iter().map(|&(i, j)| fin.u[i] * fin.v[j]).collect())
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let cfg = DualConfig::with_dt(1e-4);
    let allowance = 4.0 * dx;
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for (k, &(i, j)) in cells.iter().enumerate() {
        let (x, y) = (grid.center(i), grid.center(j));
        let spde = MomentEstimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        let dual_samples = two_motion_samples(
            x,
            y,
            t,
            &left,
            &right,
            gamma,
            rho,
            &cfg,
            n,
            seeds.child(&format!("dual-{k}")),
        );
        let dual = MomentEstimate::from_samples(&dual_samples);
        checks.push(Check::agreement(
            format!("E[u(x)v(y)] at ({}, {})", pairs[k].0, pairs[k].1),
            spde.minus(&dual),
            3.0,
            allowance,
            0.02,
        ));
        details.push(json!({"x": x, "y": y, "spde": spde, "dual": dual}));
    }
    Ok(Criterion::new(
        2,
        "second-moment duality",
        suite_of(2),
        checks,
        json!({"rho": rho, "gamma": gamma, "t": t, "dx": dx, "dual_dt": cfg.dt, "eps_band": cfg.eps_band, "points": details}),
    ))
}

fn local_time_oracle(opts: &VerifyOptions) -> Result<Criterion> {
    let cases = [(0.5, 0.0, 1.0), (0.8, 1.0, 1.0), (0.8, 0.0, 4.0)];
    let dt = 4e-4;
    let factors = [4.0, 2.0, 1.0];
    let n = opts.n(20000);
    let seeds = opts.seeds(3);
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for (k, &(s, z, t)) in cases.iter().enumerate() {
        let q = DualQuery {
            positions: vec![0.0, z],
            colours: vec![Colour::One, Colour::Two],
            u0: &one,
            v0: &one,
            t,
            kind: EstimatorKind::ProductMoment,
        };
        // gamma = 1, rho = -s.
        let est = extrapolated_estimate(
            &q,
            1.0,
            -s,
            dt,
            &factors,
            n,
            seeds.child(&format!("case-{k}")),
        )?;
        let oracle = collision_laplace_oracle(s, z, t)?;
        checks.push(Check::agreement(
            format!("E[exp(-{s} L)] z={z} t={t}"),
            est.extrapolated.minus(&MomentEstimate::exact(oracle, n)),
            3.0,
            0.0,
            0.01,
        ));
        details.push(json!({"s": s, "z": z, "t": t, "oracle": oracle, "estimate": est}));
    }
    Ok(Criterion::new(
        3,
        "closed-form local-time oracle",
        suite_of(3),
        checks,
        json!({"dt": dt, "eps_factors": factors, "cases": details}),
    ))
}

fn martingale(opts: &VerifyOptions) -> Result<Criterion> {
    let (rho, gamma, t, dx) = (-0.8, 1.0, 0.5, 0.05);
    let n = opts.n(4000);
    let params = ModelParams::on_default_domain(rho, gamma, dx, t)?;
    let ic = make_heaviside_ic(&params.grid);
    let bumps = default_test_bumps();
    let reports = martingale_check(&ic, &bumps, t, &params, n, opts.seeds(4))?;
    let mut checks = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        checks.push(Check::agreement(
            format!("mean M bump {k}"),
            r.mean_m.minus(&MomentEstimate::exact(0.0, n)),
            3.0,
            0.0,
            f64::INFINITY,
        ));
        checks.push(Check::agreement(
            format!("mean N bump {k}"),
            r.mean_n.minus(&MomentEstimate::exact(0.0, n)),
            3.0,
            0.0,
            f64::INFINITY,
        ));
        // Distance of the ratio from [0.9, 1.1].
        let outside = (0.9 - r.var_ratio).max(r.var_ratio - 1.1).max(0.0);
        checks.push(Check::agreement(
            format!("variance ratio bump {k}"),
            Difference {
                delta: outside,
                std_error: r.var_ratio_se,
            },
            3.0,
            0.0,
            0.05,
        ));
        checks.push(Check::agreement(
            format!("rho_hat bump {k}"),
            Difference {
                delta: r.rho_hat - rho,
                std_error: r.rho_hat_se,
            },
            0.0,
            0.1,
            0.05,
        ));
    }
    Ok(Criterion::new(
        4,
        "martingale structure",
        suite_of(4),
        checks,
        json!({"rho": rho, "gamma": gamma, "t": t, "dx": dx, "n_replicas": n, "reports": reports}),
    ))
}

fn self_duality(opts: &VerifyOptions) -> Result<Criterion> {
    let (rho, gamma, t) = (-0.8, 1.0, 0.5);
    let n = opts.n(4000);
    let seeds = opts.seeds(5);
    let allowance = 0.01;
    let mut reports = Vec::new();
    for dx in [0.1, 0.05] {
        let params = ModelParams::on_default_domain(rho, gamma, dx, t)?;
        let ic1 = make_heaviside_ic(&params.grid);
        let ic2 = offset_gaussians(&params.grid, 1.0, 0.5);
        reports.push(self_duality_check(
            &ic1,
            &ic2,
            t,
            &params,
            n,
            seeds.child(&format!("dx-{dx}")),
            allowance,
        )?);
    }
    let (coarse, fine) = (&reports[0], &reports[1]);
    let checks = vec![
        Check::agreement(
            "|lhs - rhs| at dx = 0.05",
            fine.residual,
            3.0,
            allowance,
            0.01,
        ),
        Check::agreement(
            "residual growth under refinement",
            Difference {
                delta: (fine.residual.delta.abs() - coarse.residual.delta.abs()).max(0.0),
                std_error: fine.residual.std_error.hypot(coarse.residual.std_error),
            },
            3.0,
            0.0,
            0.01,
        ),
        Check::bound("max |F|", fine.max_abs_f.max(coarse.max_abs_f), 1.0),
    ];
    Ok(Criterion::new(
        5,
        "self-duality",
        suite_of(5),
        checks,
        json!({"rho": rho, "gamma": gamma, "t": t, "reports": reports}),
    ))
}

fn scaling(opts: &VerifyOptions) -> Result<Criterion> {
    let (k, t, gamma, rho, dx) = (4.0, 0.25, 0.5, -0.8, 0.2);
    let n = opts.n(4000);
    let report = scaling_equivalence_check(
        k,
        t,
        gamma,
        rho,
        dx,
        &[(0.0, 0.0), (-0.25, 0.25), (-0.5, 0.0)],
        0.05,
        n,
        opts.seeds(6),
    )?;
    let checks = report
        .comparisons
        .iter()
        .map(|c| Check::agreement(c.label.clone(), c.scaled.minus(&c.direct), 3.0, 0.0, 0.02))
        .collect();
    Ok(Criterion::new(
        6,
        "scaling property",
        suite_of(6),
        checks,
        serde_json::to_value(&report).expect("serialisable"),
    ))
}

fn trend_check(name: String, verdict: TrendVerdict, want: TrendVerdict, p: f64) -> Check {
    let v = if verdict == want {
        Verdict::Pass
    } else if verdict == TrendVerdict::Inconclusive {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    Check::flag(format!("{name}: {verdict:?}, want {want:?}"), v, p, 0.05)
}

fn critical_curve(opts: &VerifyOptions) -> Result<Criterion> {
    let t_list = [1.0, 2.0, 4.0];
    let settings = ProbeSettings {
        dx: 0.1,
        dual_dt: 1e-3,
        n_spde: opts.n(2000),
        n_dual: opts.n(20000),
        n_batches: 10,
        alpha: 0.05,
    };
    let seeds = opts.seeds(7);
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for (rho, want) in [(-0.5, TrendVerdict::Flat), (0.5, TrendVerdict::Increasing)] {
        let r = boundedness_probe(
            2,
            rho,
            1.0,
            &t_list,
            &settings,
            seeds.child(&format!("rho-{rho}")),
        )?;
        checks.push(trend_check(
            format!("spde rho={rho}"),
            r.spde_trend.verdict,
            want,
            r.spde_trend.mk_batch_p,
        ));
        checks.push(trend_check(
            format!("dual rho={rho}"),
            r.dual_trend.verdict,
            want,
            r.dual_trend.mk_batch_p,
        ));
        reports.push(r);
    }
    Ok(Criterion::new(
        7,
        "critical curve",
        suite_of(7),
        checks,
        json!({"settings": settings, "reports": reports}),
    ))
}

fn fourth_moment_and_width(opts: &VerifyOptions) -> Result<Criterion> {
    let (rho, gamma, dx, eps) = (-0.8, 1.0, 0.05, 0.05);
    let t_list = [1.0, 2.0, 4.0];
    let zs = [0.5, 1.0];
    let n = opts.n(600);
    let seeds = opts.seeds(8);
    let mut fourth = Vec::new();
    let mut width = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    for &t in &t_list {
        let params = ModelParams::on_default_domain(rho, gamma, dx, t)?;
        let grid = params.grid;
        let ic = make_heaviside_ic(&grid);
        let s = seeds.child(&format!("horizon-{t}"));
        let want_z = t == 1.0;
        let rows: Vec<Result<Vec<f64>>> = run_replicas(n, |r| {
            let fin = simulate(&ic, t, &params, s, r, &[])?.final_state;
            let mut out = vec![
                integrated_fourth_sample(&fin, &grid),
                approx_interface(&fin, &grid, eps, 0.0)?.width.sqrt(),
            ];
            if want_z {
                for &z in &zs {
                    out.push(z_resolved_fourth(&fin, &grid, z)?);
                }
            }
            Ok(out)
        });
        let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
        fourth.push(rows.iter().map(|r| r[0]).collect::<Vec<_>>());
        width.push(rows.iter().map(|r| r[1]).collect::<Vec<_>>());
        if want_z {
            z_rows = rows.iter().map(|r| r[2..].to_vec()).collect();
        }
    }
    let fourth_trend = classify_trend(&fourth, 10, 0.05);
    let width_trend = classify_trend(&width, 10, 0.05);
    let not_increasing = |name: &str, tr: &crate::stats::TrendReport| {
        let v = match tr.verdict {
            TrendVerdict::Flat => Verdict::Pass,
            TrendVerdict::Inconclusive => Verdict::Inconclusive,
            TrendVerdict::Increasing => Verdict::Fail,
        };
        Check::flag(format!("{name}: {:?}", tr.verdict), v, tr.mk_batch_p, 0.05)
    };
    let mut checks = vec![
        not_increasing("E[(int uv)^2] trend", &fourth_trend),
        not_increasing("E[width^0.5] trend", &width_trend),
    ];
    let mut cross = Vec::new();
    let n_dual = opts.n(20000);
    for (k, &z) in zs.iter().enumerate() {
        let spde = MomentEstimate::from_samples(&z_rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        let q = DualQuery {
            positions: vec![0.0, 0.0, z, z],
            colours: vec![Colour::One, Colour::Two, Colour::One, Colour::Two],
            u0: &left,
            v0: &right,
            t: 1.0,
            kind: EstimatorKind::InterfaceFunctional,
        };
        let dual = extrapolated_estimate(
            &q,
            gamma,
            rho,
            4e-4,
            &[4.0, 2.0, 1.0],
            n_dual,
            seeds.child(&format!("dual-{z}")),
        )?;
        checks.push(Check::agreement(
            format!("z-resolved fourth moment z={z}"),
            spde.minus(&dual.extrapolated),
            3.0,
            0.0,
            0.01,
        ));
        cross.push(json!({"z": z, "spde": spde, "dual": dual}));
    }
    Ok(Criterion::new(
        8,
        "fourth moment and width",
        suite_of(8),
        checks,
        json!({
            "rho": rho, "gamma": gamma, "dx": dx, "eps": eps, "t_list": t_list,
            "fourth_trend": fourth_trend, "width_trend": width_trend, "cross_check": cross
        }),
    ))
}

fn separation(opts: &VerifyOptions) -> Result<Criterion> {
    let (rho, t, dx) = (-0.8, 0.5, 0.05);
    let eps_list = [0.4, 0.2, 0.1, 0.05];
    let gammas = [1.0, 4.0, 16.0];
    let x_list = [-0.5, 0.0, 0.5];
    let n = opts.n(1000);
    let n_dual = opts.n(4000);
    let seeds = opts.seeds(9);
    let mut by_gamma = Vec::new();
    for &g in &gammas {
        let params = ModelParams::on_default_domain(rho, g, dx, t)?;
        by_gamma.push(separation_probe(
            &eps_list,
            &x_list,
            t,
            &params,
            n,
            n_dual,
            1e-3,
            seeds.child(&format!("gamma-{g}")),
        )?);
    }
    let mut checks = Vec::new();
    let worst = by_gamma
        .iter()
        .flatten()
        .map(|p| (p.estimate.value - p.ceiling) / p.estimate.std_error.max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::bound("max (estimate - ceiling) / SE", worst, 3.0));
    let at_origin = |pts: &Vec<crate::duality_scaling::SeparationPoint>| -> Vec<MomentEstimate> {
        pts.iter()
            .filter(|p| p.x.abs() < dx)
            .map(|p| p.estimate)
            .collect()
    };
    for (g, pts) in gammas.iter().zip(&by_gamma) {
        let e = at_origin(pts);
        let viol = e.windows(2).filter(|w| w[1].value >= w[0].value).count();
        checks.push(Check::bound(
            format!("non-decreasing steps in eps at gamma={g}"),
            viol as f64,
            0.0,
        ));
    }
    for (ke, eps) in eps_list.iter().enumerate() {
        let e: Vec<MomentEstimate> = by_gamma.iter().map(|pts| at_origin(pts)[ke]).collect();
        let viol = e.windows(2).filter(|w| w[1].value >= w[0].value).count();
        checks.push(Check::bound(
            format!("non-decreasing steps in gamma at eps={eps}"),
            viol as f64,
            0.0,
        ));
    }
    let details: Vec<Value> = gammas
        .iter()
        .zip(&by_gamma)
        .map(|(g, pts)| json!({"gamma": g, "points": pts}))
        .collect();
    Ok(Criterion::new(
        9,
        "separation of types",
        suite_of(9),
        checks,
        json!({"rho": rho, "t": t, "dx": dx, "probes": details}),
    ))
}

fn brownian(opts: &VerifyOptions) -> Result<Criterion> {
    let seeds = opts.seeds(10);
    let mut checks = Vec::new();
    let n_levy = opts.n(20000);
    let (dt, eps) = (1e-4, 1.5e-2);
    let mut levy = Vec::new();
    for z in [0.0, 1.0] {
        let r = levy_identity_check(z, 1.0, n_levy, dt, eps, seeds.child(&format!("levy-{z}")));
        checks.push(Check::flag(
            format!("Levy KS adjusted p-value z={z}"),
            Verdict::from_bool(r.pass),
            r.adjusted_p_value.min(r.abs_gaussian_p.unwrap_or(1.0)),
            0.01,
        ));
        levy.push(r);
    }

    let zs = [0.0, 0.5, 1.0];
    let alphas = [0.25, 1.0, 2.0];
    let ts = [1.0, std::f64::consts::E, 10.0];
    let n_tail = opts.n(100_000);
    let n_pair = opts.n(4000);
    let mut worst_tail = f64::NEG_INFINITY;
    let mut worst_pair = f64::NEG_INFINITY;
    let mut tails = Vec::new();
    for (kz, &z) in zs.iter().enumerate() {
        for (kt, &t) in ts.iter().enumerate() {
            // band pair samples are reported alongside, without a verdict
            let band = collision_local_time_samples(
                0.0,
                z,
                t,
                1e-3,
                2.0 * 1e-3f64.sqrt(),
                n_pair,
                seeds.child(&format!("pair-{kz}-{kt}")),
            );
            for (ka, &a) in alphas.iter().enumerate() {
                let tag = format!("{kz}-{kt}-{ka}");
                let single =
                    local_time_tail_check(z, a, t, n_tail, seeds.child(&format!("tail-{tag}")));
                let coll = collision_tail_exact_check(
                    z,
                    a,
                    t,
                    n_tail,
                    seeds.child(&format!("coll-{tag}")),
                );
                let band = collision_tail_report(&band, z, a, t);
                worst_tail =
                    worst_tail.max(single.empirical_p - single.bound - 3.0 * single.std_error);
                worst_pair = worst_pair.max(coll.empirical_p - coll.bound - 3.0 * coll.std_error);
                tails
                    .push(json!({"local_time": single, "collision": coll, "collision_band": band}));
            }
        }
    }
    checks.push(Check::bound(
        "local-time tail excess over bound + 3 SE",
        worst_tail,
        0.0,
    ));
    checks.push(Check::bound(
        "collision tail excess over bound + 3 SE",
        worst_pair,
        0.0,
    ));

    let h = |z: f64, s: f64| (-z * z).exp() * s;
    let occ = occupation_formula_check(
        &h,
        1.0,
        1e-4,
        0.02,
        6.0,
        opts.n(400),
        seeds.child("occupation"),
    );
    checks.push(Check::bound(
        "occupation formula rel_err",
        occ.rel_err,
        0.05,
    ));

    let lap = laplace_bound_check(
        1.0,
        &[1.0, 4.0, 16.0, 64.0],
        opts.n(100_000),
        seeds.child("laplace"),
    );
    for p in &lap.points {
        checks.push(Check::agreement(
            format!("Laplace sampled vs quadrature t={}", p.t),
            p.sampled
                .minus(&MomentEstimate::exact(p.quadrature, p.sampled.n_replicas)),
            3.0,
            0.0,
            f64::INFINITY,
        ));
        checks.push(Check::bound(
            format!("Laplace envelope t={}", p.t),
            p.quadrature,
            p.envelope,
        ));
    }
    Ok(Criterion::new(
        10,
        "Brownian toolkit",
        suite_of(10),
        checks,
        json!({"levy": levy, "tails": tails, "occupation": occ, "laplace": lap}),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_combination() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Pass, Pass]), Pass);
        assert_eq!(Verdict::combine([Pass, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::combine([Inconclusive, Fail, Pass]), Fail);
        assert_eq!(Verdict::combine([]), Pass);
    }

    #[test]
    fn wide_errors_are_inconclusive() {
        let d = Difference {
            delta: 0.5,
            std_error: 0.2,
        };
        assert_eq!(
            Check::agreement("x", d, 3.0, 0.0, 0.05).verdict,
            Verdict::Inconclusive
        );
        assert_eq!(
            Check::agreement("x", d, 3.0, 0.0, 1.0).verdict,
            Verdict::Pass
        );
        let tight = Difference {
            delta: 0.5,
            std_error: 0.01,
        };
        assert_eq!(
            Check::agreement("x", tight, 3.0, 0.0, 0.05).verdict,
            Verdict::Fail
        );
    }

    #[test]
    fn suites_partition_the_criteria() {
        let mut all: Vec<u32> = [
            Suite::Heat,
            Suite::Duality,
            Suite::Martingale,
            Suite::Interface,
            Suite::Curve,
            Suite::Selfdual,
            Suite::Scaling,
            Suite::Brownian,
        ]
        .iter()
        .flat_map(|s| suite_criteria(*s))
        .collect();
        all.sort();
        assert_eq!(all, suite_criteria(Suite::All));
        for id in 1..=10 {
            assert!(suite_criteria(suite_of(id)).contains(&id));
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn heat_criterion_passes() {
        let c = run_criterion(1, &VerifyOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Pass, "{}", c.summary());
    }
}
