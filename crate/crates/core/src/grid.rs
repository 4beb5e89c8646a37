//! Grid geometry, field storage, discrete white noise and quadrature.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbmError};
use crate::rng::RngStream;

/// Uniform cell-centred grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            n_cells,
        };
        g.validate()?;
        Ok(g)
    }

    /// Symmetric grid `[-half_width, half_width]` with spacing as close to
    /// `dx` as an even cell count allows. The width is adjusted so that the
    /// spacing is exactly `dx`.
    pub fn symmetric(half_width: f64, dx: f64) -> Result<Self> {
        if !(half_width > 0.0) || !(dx > 0.0) {
            return Err(SbmError::param(
                "grid",
                "half width and dx must be positive",
            ));
        }
        let mut n = (2.0 * half_width / dx).round() as usize;
        n = n.max(2);
        if n % 2 == 1 {
            n += 1;
        }
        let w = n as f64 * dx / 2.0;
        Self::new(-w, w, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) || self.x_min >= self.x_max {
            return Err(SbmError::param("grid", "need finite x_min < x_max"));
        }
        if self.n_cells < 2 {
            return Err(SbmError::param("grid", "need at least 2 cells"));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Index of the cell whose center is nearest to `x`; ties go to the
    /// lower index.
    pub fn nearest_index(&self, x: f64) -> Result<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return Err(SbmError::OutOfDomain {
                x,
                lo: self.x_min,
                hi: self.x_max,
            });
        }
        let s = (x - self.x_min) / self.dx() - 0.5;
        let lo = s.floor();
        let frac = s - lo;
        let idx = if frac > 0.5 { lo + 1.0 } else { lo };
        Ok((idx.max(0.0) as usize).min(self.n_cells - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Boundary cells hold their initial values for all time.
    #[default]
    DirichletPinnedToInitial,
}

/// How the explicit step keeps the fields nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Positivity {
    /// Gaussian increment, negatives set to zero.
    Clamp,
    /// Gaussian increment while the pre-noise value `m` is at least
    /// `MOMENT_MATCH_SIGMAS` noise standard deviations `s`. Below that the
    /// new value keeps conditional mean `m` and variance `s^2` but is drawn
    /// from a lognormal law (for `m >= s`) or a two-point law on
    /// `{0, (m^2 + s^2) / m}`, both driven monotonically by the same
    /// Gaussian draw so the noise correlation carries over.
    #[default]
    MomentMatched,
}

pub const MOMENT_MATCH_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rho: f64,
    pub gamma: f64,
    pub dt: f64,
    pub grid: GridSpec,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub positivity: Positivity,
}

impl ModelParams {
    pub fn new(rho: f64, gamma: f64, dt: f64, grid: GridSpec) -> Result<Self> {
        let p = Self {
            rho,
            gamma,
            dt,
            grid,
            boundary: Boundary::DirichletPinnedToInitial,
            positivity: Positivity::default(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters on the default symmetric domain for horizon `t_max` with
    /// `dt = dx^2 / 4`.
    pub fn on_default_domain(rho: f64, gamma: f64, dx: f64, t_max: f64) -> Result<Self> {
        let grid = GridSpec::symmetric(default_half_width(t_max, gamma), dx)?;
        Self::new(rho, gamma, dx * dx / 4.0, grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(SbmError::param(
                "rho",
                format!("{} not in [-1, 1]", self.rho),
            ));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(SbmError::param("gamma", "must be finite and nonnegative"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SbmError::param("dt", "must be positive"));
        }
        let dx = self.grid.dx();
        let limit = dx * dx / 2.0;
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(SbmError::Cfl { dt: self.dt, limit });
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_positivity(mut self, positivity: Positivity) -> Self {
        self.positivity = positivity;
        self
    }
}

/// Domain half-width rule `6 sqrt(T) + 6 sqrt(gamma T)`.
pub fn default_half_width(t_max: f64, gamma: f64) -> f64 {
    let t = t_max.max(0.0);
    (6.0 * t.sqrt() + 6.0 * (gamma * t).sqrt()).max(2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl FieldPair {
    pub fn from_fns(grid: &GridSpec, u0: impl Fn(f64) -> f64, v0: impl Fn(f64) -> f64) -> Self {
        let xs = grid.centers();
        Self {
            u: xs.iter().map(|&x| u0(x).max(0.0)).collect(),
            v: xs.iter().map(|&x| v0(x).max(0.0)).collect(),
            t: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Mirror image `x -> -x` with the roles of `u` and `v` exchanged.
    pub fn mirrored_swap(&self) -> Self {
        let mut u = self.v.clone();
        let mut v = self.u.clone();
        u.reverse();
        v.reverse();
        Self { u, v, t: self.t }
    }
}

/// Complementary Heaviside data: `u = 1` left of the origin, `v = 1` right of
/// it. A cell follows the sign of its center.
pub fn make_heaviside_ic(grid: &GridSpec) -> FieldPair {
    FieldPair::from_fns(
        grid,
        |x| if x < 0.0 { 1.0 } else { 0.0 },
        |x| if x > 0.0 { 1.0 } else { 0.0 },
    )
}

pub fn make_constant_ic(grid: &GridSpec, value: f64) -> FieldPair {
    FieldPair::from_fns(grid, |_| value, |_| value)
}

/// Midpoint quadrature `sum_i field_i * test_fn(x_i) * dx`.
pub fn pair_field(field: &[f64], test_fn: impl Fn(f64) -> f64, grid: &GridSpec) -> Result<f64> {
    debug_assert_eq!(field.len(), grid.n_cells);
    let dx = grid.dx();
    let mut acc = 0.0;
    for (i, &f) in field.iter().enumerate() {
        let x = grid.center(i);
        let g = test_fn(x);
        if !g.is_finite() {
            return Err(SbmError::NonFiniteTestFn { x });
        }
        acc += f * g;
    }
    Ok(acc * dx)
}

/// Pairing of two sampled fields, `sum_i a_i b_i dx`.
pub fn pair_sampled(a: &[f64], b: &[f64], grid: &GridSpec) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * grid.dx()
}

pub fn sample_fn(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..grid.n_cells).map(|i| f(grid.center(i))).collect()
}

/// Fills `xi1`, `xi2` with correlated discrete white noise: per cell
/// `(g, rho g + sqrt(1 - rho^2) h) * sqrt(dt / dx)`.
pub fn fill_correlated_noise(
    rho: f64,
    scale: f64,
    rng1: &mut impl Rng,
    rng2: &mut impl Rng,
    xi1: &mut [f64],
    xi2: &mut [f64],
) {
    let orth = (1.0 - rho * rho).max(0.0).sqrt();
    for (a, b) in xi1.iter_mut().zip(xi2.iter_mut()) {
        let g: f64 = rng1.sample(StandardNormal);
        let h: f64 = rng2.sample(StandardNormal);
        *a = g * scale;
        *b = (rho * g + orth * h) * scale;
    }
}

pub fn sample_correlated_noise(
    rho: f64,
    grid: &GridSpec,
    dt: f64,
    rng1: RngStream,
    rng2: RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(SbmError::param("rho", format!("{rho} not in [-1, 1]")));
    }
    let mut a = vec![0.0; grid.n_cells];
    let mut b = vec![0.0; grid.n_cells];
    let scale = (dt / grid.dx()).sqrt();
    fill_correlated_noise(rho, scale, &mut rng1.rng(), &mut rng2.rng(), &mut a, &mut b);
    Ok((a, b))
}

/// Heat semigroup `S_tau` on the grid by exact Gaussian convolution: the
/// kernel `p_tau` is sampled at cell offsets and renormalised to unit sum
/// over the full lattice of offsets.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    weights: Vec<f64>,
}

impl HeatKernel {
    pub fn new(tau: f64, dx: f64) -> Self {
        if tau <= 0.0 {
            return Self { weights: vec![1.0] };
        }
        let sigma = tau.sqrt();
        let reach = ((12.0 * sigma / dx).ceil() as usize).max(1);
        let mut weights: Vec<f64> = (0..=reach)
            .map(|k| {
                let y = k as f64 * dx;
                (-y * y / (2.0 * tau)).exp()
            })
            .collect();
        let total = weights[0] + 2.0 * weights[1..].iter().sum::<f64>();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { weights }
    }

    pub fn reach(&self) -> usize {
        self.weights.len() - 1
    }

    /// Weight at lattice offset `k` (symmetric).
    pub fn weight(&self, k: isize) -> f64 {
        self.weights.get(k.unsigned_abs()).copied().unwrap_or(0.0)
    }

    /// Applies the kernel to grid values, treating cells outside the grid as
    /// zero.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let r = self.reach() as isize;
        (0..n as isize)
            .map(|i| {
                let lo = (i - r).max(0);
                let hi = (i + r).min(n as isize - 1);
                (lo..=hi)
                    .map(|j| self.weight(i - j) * values[j as usize])
                    .sum()
            })
            .collect()
    }

    /// Kernel-smoothed value at cell `i`.
    pub fn apply_at(&self, values: &[f64], i: usize) -> f64 {
        let n = values.len() as isize;
        let r = self.reach() as isize;
        let i = i as isize;
        let lo = (i - r).max(0);
        let hi = (i + r).min(n - 1);
        (lo..=hi)
            .map(|j| self.weight(i - j) * values[j as usize])
            .sum()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `S_t 1_{x<0}(x) = Phi(-x / sqrt(t))`.
pub fn heat_of_left_step(x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return if x < 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(-x / t.sqrt())
}
