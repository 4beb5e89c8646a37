//! Coloured Brownian particle dual.
//!
//! Particles move as independent Brownian motions. Every pair collects
//! collision local time; for a pair of equal colour this also runs a clock,
//! and when the clock passes an independent `Exp(gamma)` threshold one member
//! of the pair switches colour. Mixed moments of the field pair are then
//!
//! ```text
//! E[u_t(x_1)...u_t(x_n) v_t(x_{n+1})...v_t(x_{n+m})]
//!     = E[(u_0, v_0)^{l_t} exp(gamma (L^= + rho L^!=))]
//! ```
//!
//! where `(u_0, v_0)^{l_t}` evaluates `u_0` at colour-1 particles and `v_0` at
//! colour-2 particles. Local time is measured with the symmetric band
//! estimator `(dt / 2 eps) 1{|X_i - X_j| <= eps}` per step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::brownian;
use crate::error::{Result, SbmError};
use crate::estimate::{run_replicas, MomentEstimate};
use crate::quad::integrate_to_infinity;
use crate::rng::{SeedPlan, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Colour {
    /// Evaluated against `u_0`.
    One,
    /// Evaluated against `v_0`.
    Two,
}

impl Colour {
    pub fn other(self) -> Self {
        match self {
            Colour::One => Colour::Two,
            Colour::Two => Colour::One,
        }
    }
}

/// Which member of a same-colour pair switches colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipRule {
    #[default]
    Uniform,
    Lower,
    Higher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub dt: f64,
    pub eps_band: f64,
    #[serde(default)]
    pub flip_rule: FlipRule,
}

impl DualConfig {
    /// Band width `2 sqrt(dt)`.
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            eps_band: 2.0 * dt.sqrt(),
            flip_rule: FlipRule::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(SbmError::param("dt", "must be positive"));
        }
        if !(self.eps_band > 0.0) {
            return Err(SbmError::param("eps_band", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColouredParticleSystem {
    pub positions: Vec<f64>,
    pub colours: Vec<Colour>,
    /// Same-colour collision local time since the pair's last reset, indexed
    /// by `pair_index`.
    pub same_colour_clock: Vec<f64>,
    pub threshold: Vec<f64>,
    pub l_eq: f64,
    pub l_neq: f64,
    pub t: f64,
    pub flips: u64,
    /// Clock value at the moment of each flip (kept only when requested).
    pub flip_clocks: Option<Vec<f64>>,
}

/// Index of the unordered pair `i < j` among `n` particles.
#[inline]
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

fn draw_threshold(gamma: f64, rng: &mut impl Rng) -> f64 {
    if gamma > 0.0 {
        rng.sample(Exp::new(gamma).expect("positive rate"))
    } else {
        f64::INFINITY
    }
}

impl ColouredParticleSystem {
    pub fn new(
        positions: Vec<f64>,
        colours: Vec<Colour>,
        gamma: f64,
        clocks: &mut impl Rng,
    ) -> Self {
        assert_eq!(positions.len(), colours.len());
        let n = positions.len();
        let n_pairs = n * n.saturating_sub(1) / 2;
        Self {
            positions,
            colours,
            same_colour_clock: vec![0.0; n_pairs],
            threshold: (0..n_pairs)
                .map(|_| draw_threshold(gamma, clocks))
                .collect(),
            l_eq: 0.0,
            l_neq: 0.0,
            t: 0.0,
            flips: 0,
            flip_clocks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn count(&self, c: Colour) -> usize {
        self.colours.iter().filter(|&&k| k == c).count()
    }

    /// Advances all particles by one Brownian increment, routes the band
    /// local time of every pair, then processes clock expiries in ascending
    /// pair order.
    pub fn step(
        &mut self,
        cfg: &DualConfig,
        gamma: f64,
        moves: &mut impl Rng,
        clocks: &mut impl Rng,
        flips: &mut impl Rng,
    ) {
        let sd = cfg.dt.sqrt();
        for p in self.positions.iter_mut() {
            let z: f64 = moves.sample(StandardNormal);
            *p += sd * z;
        }
        self.t += cfg.dt;
        self.accrue_and_flip(cfg, gamma, clocks, flips);
    }

    /// Local-time routing and colour switching at the current positions.
    pub fn accrue_and_flip(
        &mut self,
        cfg: &DualConfig,
        gamma: f64,
        clocks: &mut impl Rng,
        flips: &mut impl Rng,
    ) {
        let n = self.len();
        let inc = cfg.dt / (2.0 * cfg.eps_band);
        let mut any_expired = false;
        for i in 0..n {
            for j in i + 1..n {
                if (self.positions[i] - self.positions[j]).abs() <= cfg.eps_band {
                    let k = pair_index(i, j, n);
                    if self.colours[i] == self.colours[j] {
                        self.l_eq += inc;
                        self.same_colour_clock[k] += inc;
                        any_expired |= self.same_colour_clock[k] > self.threshold[k];
                    } else {
                        self.l_neq += inc;
                    }
                }
            }
        }
        if !any_expired {
            return;
        }
        for i in 0..n {
            for j in i + 1..n {
                let k = pair_index(i, j, n);
                if self.colours[i] != self.colours[j]
                    || self.same_colour_clock[k] <= self.threshold[k]
                {
                    continue;
                }
                let flipped = match cfg.flip_rule {
                    FlipRule::Uniform => {
                        if flips.random::<bool>() {
                            i
                        } else {
                            j
                        }
                    }
                    FlipRule::Lower => i,
                    FlipRule::Higher => j,
                };
                if let Some(log) = self.flip_clocks.as_mut() {
                    log.push(self.same_colour_clock[k]);
                }
                self.colours[flipped] = self.colours[flipped].other();
                self.flips += 1;
                for &a in &[i, j] {
                    for m in (0..n).filter(|&m| m != a) {
                        let q = pair_index(a.min(m), a.max(m), n);
                        self.same_colour_clock[q] = 0.0;
                        self.threshold[q] = draw_threshold(gamma, clocks);
                    }
                }
            }
        }
    }

    pub fn log_weight(&self, gamma: f64, rho: f64) -> f64 {
        gamma * (self.l_eq + rho * self.l_neq)
    }

    /// `(u_0, v_0)^{l_t}`.
    pub fn field_product(&self, u0: &dyn Fn(f64) -> f64, v0: &dyn Fn(f64) -> f64) -> f64 {
        self.positions
            .iter()
            .zip(&self.colours)
            .map(|(&x, c)| match c {
                Colour::One => u0(x),
                Colour::Two => v0(x),
            })
            .product()
    }
}

/// One replica's generators.
pub struct DualStreams {
    pub moves: ChaCha8Rng,
    pub clocks: ChaCha8Rng,
    pub flips: ChaCha8Rng,
}

impl DualStreams {
    pub fn new(seeds: SeedPlan, replica: u64) -> Self {
        Self {
            moves: seeds.stream(replica, StreamTag::Particles).rng(),
            clocks: seeds.stream(replica, StreamTag::Clocks).rng(),
            flips: seeds.stream(replica, StreamTag::Flips).rng(),
        }
    }
}

/// Runs one system to `t` and returns it.
pub fn run_system(
    positions: &[f64],
    colours: &[Colour],
    t: f64,
    gamma: f64,
    cfg: &DualConfig,
    streams: &mut DualStreams,
) -> ColouredParticleSystem {
    let mut sys = ColouredParticleSystem::new(
        positions.to_vec(),
        colours.to_vec(),
        gamma,
        &mut streams.clocks,
    );
    let steps = n_steps(t, cfg.dt);
    let cfg = DualConfig {
        dt: if steps > 0 { t / steps as f64 } else { cfg.dt },
        ..*cfg
    };
    for _ in 0..steps {
        sys.step(
            &cfg,
            gamma,
            &mut streams.moves,
            &mut streams.clocks,
            &mut streams.flips,
        );
    }
    sys
}

fn n_steps(t: f64, dt: f64) -> usize {
    if t <= 0.0 {
        0
    } else {
        (t / dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    ProductMoment,
    InterfaceFunctional,
}

/// A mixed-moment query: particle starts, colours, initial data and horizon.
pub struct DualQuery<'a> {
    pub positions: Vec<f64>,
    pub colours: Vec<Colour>,
    pub u0: &'a (dyn Fn(f64) -> f64 + Sync),
    pub v0: &'a (dyn Fn(f64) -> f64 + Sync),
    pub t: f64,
    pub kind: EstimatorKind,
}

impl DualQuery<'_> {
    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.positions.len() != self.colours.len() {
            return Err(SbmError::param(
                "query",
                "need matching, nonempty positions and colours",
            ));
        }
        if !(self.t >= 0.0) {
            return Err(SbmError::param("t", "must be nonnegative"));
        }
        Ok(())
    }

    /// Replica-level sample for the given system state.
    fn score(&self, sys: &ColouredParticleSystem, gamma: f64, rho: f64) -> f64 {
        let base = match self.kind {
            EstimatorKind::ProductMoment => sys.field_product(self.u0, self.v0),
            EstimatorKind::InterfaceFunctional => interface_gap(sys),
        };
        if base == 0.0 {
            0.0
        } else {
            base * sys.log_weight(gamma, rho).exp()
        }
    }
}

/// `(B^{r} - B^{l})^+` with `r` the left-most colour-1 particle and `l` the
/// right-most colour-2 particle (smaller index on ties).
pub fn interface_gap(sys: &ColouredParticleSystem) -> f64 {
    let mut r: Option<usize> = None;
    let mut l: Option<usize> = None;
    for (i, (&x, &c)) in sys.positions.iter().zip(&sys.colours).enumerate() {
        match c {
            Colour::One => {
                if r.is_none_or(|k| x < sys.positions[k]) {
                    r = Some(i);
                }
            }
            Colour::Two => {
                if l.is_none_or(|k| x > sys.positions[k]) {
                    l = Some(i);
                }
            }
        }
    }
    match (r, l) {
        (Some(r), Some(l)) => (sys.positions[r] - sys.positions[l]).max(0.0),
        _ => 0.0,
    }
}

/// Replica samples of the dual functional.
pub fn moment_samples(
    q: &DualQuery<'_>,
    gamma: f64,
    rho: f64,
    cfg: &DualConfig,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<Vec<f64>> {
    q.validate()?;
    cfg.validate()?;
    Ok(run_replicas(n_replicas, |r| {
        let mut streams = DualStreams::new(seeds, r);
        let sys = run_system(&q.positions, &q.colours, q.t, gamma, cfg, &mut streams);
        q.score(&sys, gamma, rho)
    }))
}

pub fn moment_estimate(
    q: &DualQuery<'_>,
    gamma: f64,
    rho: f64,
    cfg: &DualConfig,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<MomentEstimate> {
    Ok(MomentEstimate::from_samples(&moment_samples(
        q, gamma, rho, cfg, n_replicas, seeds,
    )?))
}

/// Least-squares intercept weights for a linear fit in `eps` evaluated at 0.
pub fn intercept_weights(eps: &[f64]) -> Vec<f64> {
    let n = eps.len() as f64;
    let mean = eps.iter().sum::<f64>() / n;
    let sxx: f64 = eps.iter().map(|e| (e - mean) * (e - mean)).sum();
    eps.iter()
        .map(|e| 1.0 / n - mean * (e - mean) / sxx)
        .collect()
}

/// Band-width extrapolation with common random numbers: each replica is run
/// at every band width on the same driving noise, and the per-replica linear
/// intercept at `eps = 0` is averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatedEstimate {
    pub eps: Vec<f64>,
    pub per_eps: Vec<MomentEstimate>,
    pub extrapolated: MomentEstimate,
}

pub fn extrapolated_estimate(
    q: &DualQuery<'_>,
    gamma: f64,
    rho: f64,
    dt: f64,
    eps_factors: &[f64],
    n_replicas: usize,
    seeds: SeedPlan,
) -> Result<ExtrapolatedEstimate> {
    q.validate()?;
    let eps: Vec<f64> = eps_factors.iter().map(|f| f * dt.sqrt()).collect();
    let weights = intercept_weights(&eps);
    let rows: Vec<Vec<f64>> = run_replicas(n_replicas, |r| {
        eps.iter()
            .map(|&e| {
                let cfg = DualConfig {
                    dt,
                    eps_band: e,
                    flip_rule: FlipRule::Uniform,
                };
                let mut streams = DualStreams::new(seeds, r);
                let sys = run_system(&q.positions, &q.colours, q.t, gamma, &cfg, &mut streams);
                q.score(&sys, gamma, rho)
            })
            .collect()
    });
    let per_eps = (0..eps.len())
        .map(|k| MomentEstimate::from_samples(&rows.iter().map(|row| row[k]).collect::<Vec<_>>()))
        .collect();
    let intercepts: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().zip(&weights).map(|(a, w)| a * w).sum())
        .collect();
    Ok(ExtrapolatedEstimate {
        eps,
        per_eps,
        extrapolated: MomentEstimate::from_samples(&intercepts),
    })
}

/// Colour-free estimator of `E_{x,y}[u_0(B^1_t) v_0(B^2_t) exp(gamma rho L^{1,2}_t)]`.
///
/// Draws increments from the same stream, in the same order, as the
/// coloured engine does for two particles.
#[allow(clippy::too_many_arguments)]
pub fn two_motion_samples(
    x: f64,
    y: f64,
    t: f64,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    v0: &(dyn Fn(f64) -> f64 + Sync),
    gamma: f64,
    rho: f64,
    cfg: &DualConfig,
    n_replicas: usize,
    seeds: SeedPlan,
) -> Vec<f64> {
    run_replicas(n_replicas, |r| {
        let path = two_motion_path(x, y, t, cfg, seeds, r);
        let base = u0(path.0) * v0(path.1);
        if base == 0.0 {
            0.0
        } else {
            base * (gamma * (rho * path.2)).exp()
        }
    })
}

/// Final positions, band local time and whether the pair ever came within
/// the band.
fn two_motion_path(
    x: f64,
    y: f64,
    t: f64,
    cfg: &DualConfig,
    seeds: SeedPlan,
    r: u64,
) -> (f64, f64, f64, bool) {
    let mut rng = seeds.stream(r, StreamTag::Particles).rng();
    let steps = n_steps(t, cfg.dt);
    let dt = if steps > 0 { t / steps as f64 } else { cfg.dt };
    let sd = dt.sqrt();
    let inc = dt / (2.0 * cfg.eps_band);
    let (mut a, mut b, mut l) = (x, y, 0.0);
    let mut met = false;
    let start_side = (y - x).signum();
    for _ in 0..steps {
        let za: f64 = rng.sample(StandardNormal);
        let zb: f64 = rng.sample(StandardNormal);
        a += sd * za;
        b += sd * zb;
        let d = b - a;
        if d.abs() <= cfg.eps_band {
            l += inc;
            met = true;
        }
        if d.signum() != start_side {
            met = true;
        }
    }
    (a, b, l, met)
}

/// Samples of `u_0(B^1_t) v_0(B^2_t) 1{L^{1,2}_t = 0}`; a discrete path counts
/// as having collected local time once the pair enters the band or the
/// order of the two motions changes.
#[allow(clippy::too_many_arguments)]
pub fn two_motion_no_collision_samples(
    starts: &[(f64, f64)],
    t: f64,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    v0: &(dyn Fn(f64) -> f64 + Sync),
    cfg: &DualConfig,
    seeds: SeedPlan,
) -> Vec<f64> {
    run_replicas(starts.len(), |r| {
        let (x, y) = starts[r as usize];
        let (a, b, _, met) = two_motion_path(x, y, t, cfg, seeds, r);
        if met {
            0.0
        } else {
            u0(a) * v0(b)
        }
    })
}

/// `E[exp(-s L_t^{1,2})]` for two independent Brownian motions started `z`
/// apart, by quadrature of the law of `L_t^{1,2} = (M_t)^+ / sqrt(2)` with
/// `M` the running maximum of a standard motion started at `-|z| / sqrt(2)`.
pub fn collision_laplace_oracle(s: f64, z: f64, t: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(SbmError::param("s", "decay rate must be positive"));
    }
    if !(t > 0.0) {
        return Err(SbmError::param("t", "horizon must be positive"));
    }
    let (level, scale) = brownian::collision_reduction(z);
    let atom = brownian::max_plus_atom(level, t);
    let tail = integrate_to_infinity(
        |m| (-s * scale * m).exp() * brownian::max_plus_density(m, level, t),
        0.0,
        1e-14,
        1e-11,
    );
    Ok(atom + tail.value)
}
