//! Fronts, interface cells and the approximate interface of a field pair.
//!
//! `R` is the right end of the support of `u`, `L` the left end of the
//! support of `v`. The approximate endpoints trim `eps` of overlap mass
//! `int u v dx` from either side:
//!
//! ```text
//! L(eps) = inf{x : int_{-inf}^x u v >= eps} /\ R
//! R(eps) = sup{x : int_x^{inf} u v >= eps} \/ L
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, MomentEstimate};
use crate::grid::{FieldPair, GridSpec, ModelParams};
use crate::rng::SeedPlan;
use crate::spde::simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceStats {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_eps")]
    pub l_eps: f64,
    #[serde(rename = "R_eps")]
    pub r_eps: f64,
    pub width: f64,
    /// Cells where `u v > tol^2`.
    pub ifc_cells: Vec<usize>,
}

impl InterfaceStats {
    /// Smallest and largest interface cell centre, if any.
    pub fn hull(&self, grid: &GridSpec) -> Option<(f64, f64)> {
        Some((
            grid.center(*self.ifc_cells.first()?),
            grid.center(*self.ifc_cells.last()?),
        ))
    }
}

/// `(R, L)`; `-inf` / `+inf` when `u` / `v` vanish identically.
pub fn fronts(state: &FieldPair, grid: &GridSpec, tol: f64) -> (f64, f64) {
    let r = state
        .u
        .iter()
        .rposition(|&a| a > tol)
        .map_or(f64::NEG_INFINITY, |i| grid.center(i));
    let l = state
        .v
        .iter()
        .position(|&b| b > tol)
        .map_or(f64::INFINITY, |i| grid.center(i));
    (r, l)
}

/// Approximate interface at overlap mass `eps`, fronts taken at `tol`.
///
/// The width is `(R_eps - L_eps)^+` when both endpoints are finite and 0
/// otherwise (one of the species is absent).
pub fn approx_interface(
    state: &FieldPair,
    grid: &GridSpec,
    eps: f64,
    tol: f64,
) -> Result<InterfaceStats> {
    if !(eps > 0.0) {
        return Err(SbmError::param("eps", "must be positive"));
    }
    let dx = grid.dx();
    let (r, l) = fronts(state, grid, tol);
    let mass: Vec<f64> = state
        .u
        .iter()
        .zip(&state.v)
        .map(|(a, b)| a * b * dx)
        .collect();

    let mut acc = 0.0;
    let mut left = f64::INFINITY;
    for (i, m) in mass.iter().enumerate() {
        acc += m;
        if acc >= eps {
            left = grid.center(i);
            break;
        }
    }
    acc = 0.0;
    let mut right = f64::NEG_INFINITY;
    for (i, m) in mass.iter().enumerate().rev() {
        acc += m;
        if acc >= eps {
            right = grid.center(i);
            break;
        }
    }
    let l_eps = left.min(r);
    let r_eps = right.max(l);
    let width = if l_eps.is_finite() && r_eps.is_finite() {
        (r_eps - l_eps).max(0.0)
    } else {
        0.0
    };
    let t2 = tol * tol;
    let ifc_cells = state
        .u
        .iter()
        .zip(&state.v)
        .enumerate()
        .filter(|(_, (a, b))| *a * *b > t2)
        .map(|(i, _)| i)
        .collect();
    Ok(InterfaceStats {
        r,
        l,
        l_eps,
        r_eps,
        width,
        ifc_cells,
    })
}

/// Per-horizon samples of `width^p` along one ensemble started from `ic`.
/// Row `k` of the result holds the replicas at `t_list[k]`.
#[allow(clippy::too_many_arguments)]
pub fn width_samples(
    ic: &FieldPair,
    t_list: &[f64],
    eps: f64,
    p: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<Vec<f64>>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SbmError::param("p", "must lie in (0, 1)"));
    }
    if !(eps > 0.0) {
        return Err(SbmError::param("eps", "must be positive"));
    }
    let t_end = t_list.iter().cloned().fold(0.0, f64::max);
    let grid = params.grid;
    let rows: Vec<Result<Vec<f64>>> = run_replicas(n_replicas, |r| {
        let out = simulate(ic, t_end, params, seeds, r, t_list)?;
        t_list
            .iter()
            .map(|&t| {
                let snap = out
                    .trajectory
                    .snapshots
                    .iter()
                    .find(|s| (s.t - t).abs() < 1e-9 * t_end.max(1.0) + 0.5 * params.dt)
                    .expect("record time present");
                Ok(approx_interface(&snap.fields, &grid, eps, 0.0)?
                    .width
                    .powf(p))
            })
            .collect()
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    Ok((0..t_list.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect())
}

/// `E[((R_t(eps) - L_t(eps))^+)^p]` at each horizon.
pub fn width_moment(
    ic: &FieldPair,
    t_list: &[f64],
    eps: f64,
    p: f64,
    params: &ModelParams,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<MomentEstimate>> {
    Ok(
        width_samples(ic, t_list, eps, p, params, n_replicas, seeds)?
            .iter()
            .map(|s| MomentEstimate::from_samples(s))
            .collect(),
    )
}

/// Interface statistics for one replica at each recorded time.
pub fn interface_series(
    ic: &FieldPair,
    t_list: &[f64],
    eps: f64,
    tol: f64,
    params: &ModelParams,
    seeds: SeedPlan,
    replica: u64,
) -> Result<Vec<(f64, InterfaceStats)>> {
    let t_end = t_list.iter().cloned().fold(0.0, f64::max);
    let out = simulate(ic, t_end, params, seeds, replica, t_list)?;
    out.trajectory
        .snapshots
        .iter()
        .map(|s| Ok((s.t, approx_interface(&s.fields, &params.grid, eps, tol)?)))
        .collect()
}

/// CSV `t,R,L,L_eps,R_eps,width`; rows grouped by replica, then time.
pub fn write_interface_csv(
    out: &mut impl Write,
    rows: &[Vec<(f64, InterfaceStats)>],
) -> std::io::Result<()> {
    writeln!(out, "t,R,L,L_eps,R_eps,width")?;
    for series in rows {
        for (t, s) in series {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t, s.r, s.l, s.l_eps, s.r_eps, s.width
            )?;
        }
    }
    Ok(())
}
