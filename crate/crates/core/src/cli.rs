//! JSON-configured experiment runner behind `sbm run`.
//!
//! A config is a flat JSON object; model parameters may also be nested under
//! `"params"`. Every run writes its outputs plus a `manifest.json` holding the
//! resolved config, so `sbm run <dir>/manifest.json` replays it exactly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::brownian::{
    collision_tail_check, collision_tail_exact_check, laplace_bound_check, levy_identity_check,
    local_time_tail_check, occupation_formula_check,
};
use crate::dual::{extrapolated_estimate, Colour, DualQuery, EstimatorKind};
use crate::duality_scaling::{offset_gaussians, scaling_equivalence_check, self_duality_check};
use crate::error::SbmError;
use crate::estimate::{run_replicas, MomentEstimate};
use crate::grid::{
    default_half_width, heat_of_left_step, make_constant_ic, make_heaviside_ic, FieldPair,
    GridSpec, ModelParams, Positivity,
};
use crate::interface::{interface_series, write_interface_csv, InterfaceStats};
use crate::moments::{
    boundedness_probe, functional_samples, i_q_moment, integrated_fourth_sample, spde_mixed_moment,
    MomentRecord, ProbeSettings, Species,
};
use crate::rng::SeedPlan;
use crate::spde::{simulate, sup_error, write_trajectory_csv};
use crate::stats::classify_trend;
use crate::verify::{run_suite, Suite, Verdict, VerifyOptions, VerifyReport, DEFAULT_SEED};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    DualMoment,
    Interface,
    Moments,
    SelfDuality,
    Scaling,
    Brownian,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Heaviside,
    Constant { value: f64 },
    OffsetGaussians { c: f64, sigma: f64 },
}

impl InitialCondition {
    pub fn build(&self, grid: &GridSpec) -> FieldPair {
        match *self {
            InitialCondition::Heaviside => make_heaviside_ic(grid),
            InitialCondition::Constant { value } => make_constant_ic(grid, value),
            InitialCondition::OffsetGaussians { c, sigma } => offset_gaussians(grid, c, sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positivity: Option<Positivity>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    #[serde(rename = "T_list", skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ic: Option<InitialCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<Value>,
}

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Rejected configuration (exit 1).
    Config(String),
    /// Simulation or IO failure (exit 1).
    Runtime(SbmError),
    /// A `verify` run with at least one failed criterion (exit 2).
    VerifyFailed(Box<VerifyReport>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::VerifyFailed(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::VerifyFailed(r) => {
                let failed: Vec<String> = r
                    .criteria
                    .iter()
                    .filter(|c| c.verdict == Verdict::Fail)
                    .map(|c| c.id.to_string())
                    .collect();
                write!(f, "verification failed for criteria {}", failed.join(", "))
            }
        }
    }
}

impl From<SbmError> for CliError {
    fn from(e: SbmError) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// 1-based line of the first occurrence of `"key"` in the source text.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

fn at_line(origin: &str, text: &str, key: &str, msg: String) -> CliError {
    match line_of(text, key) {
        Some(line) => CliError::Config(format!("{origin}:{line}: {msg}")),
        None => CliError::Config(format!("{origin}: {msg}")),
    }
}

fn require<T: Copy>(v: Option<T>, name: &str, exp: Experiment) -> CliResult<T> {
    v.ok_or_else(|| {
        CliError::Config(format!(
            "missing required field \"{name}\" for experiment \"{}\"",
            experiment_name(exp)
        ))
    })
}

fn experiment_name(e: Experiment) -> String {
    serde_json::to_value(e)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Parses a config, or the `config` member of a manifest.
pub fn parse_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let mut root: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("{origin}: invalid JSON: {e}")))?;
    if root.get("manifest_version").is_some() {
        root = root
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{origin}: manifest has no \"config\"")))?;
    }
    let Value::Object(mut obj) = root else {
        return Err(CliError::Config(format!(
            "{origin}: config must be a JSON object"
        )));
    };
    if let Some(params) = obj.remove("params") {
        let Value::Object(params) = params else {
            return Err(at_line(
                origin,
                text,
                "params",
                "\"params\" must be an object".into(),
            ));
        };
        for (k, v) in params {
            if obj.contains_key(&k) {
                return Err(at_line(
                    origin,
                    text,
                    &k,
                    format!("field \"{k}\" given twice"),
                ));
            }
            obj.insert(k, v);
        }
    }
    let cfg: RunConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| {
        let msg = e.to_string();
        let key = msg.split('`').nth(1).unwrap_or("").to_string();
        at_line(origin, text, &key, format!("invalid config: {msg}"))
    })?;
    if cfg.experiment.is_none() {
        return Err(CliError::Config(format!(
            "{origin}: missing required field \"experiment\""
        )));
    }
    Ok(cfg)
}

/// Everything an experiment needs after defaults are applied.
struct Resolved {
    cfg: RunConfig,
    seeds: SeedPlan,
    n: usize,
}

fn model_params(cfg: &mut RunConfig, exp: Experiment, t_max: f64) -> CliResult<ModelParams> {
    let rho = require(cfg.rho, "rho", exp)?;
    let gamma = require(cfg.gamma, "gamma", exp)?;
    let dx = require(cfg.dx, "dx", exp)?;
    let hw = *cfg
        .half_width
        .get_or_insert(default_half_width(t_max, gamma));
    let dt = *cfg.dt.get_or_insert(dx * dx / 4.0);
    let positivity = *cfg.positivity.get_or_insert(Positivity::default());
    let grid = GridSpec::symmetric(hw, dx)?;
    Ok(ModelParams::new(rho, gamma, dt, grid)?.with_positivity(positivity))
}

fn options<T: DeserializeOwned + Serialize + Default>(cfg: &mut RunConfig) -> CliResult<T> {
    let raw = cfg.options.clone().unwrap_or(Value::Object(Map::new()));
    let parsed: T = serde_json::from_value(raw)
        .map_err(|e| CliError::Config(format!("invalid \"options\": {e}")))?;
    cfg.options = Some(serde_json::to_value(&parsed).expect("serialisable options"));
    Ok(parsed)
}

/// Files produced by a run, in write order.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub verify: Option<VerifyReport>,
}

impl RunOutput {
    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &impl Serialize) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(v).expect("serialisable");
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

/// Runs the config at `path`. `out_override` replaces `output_dir`.
pub fn run_file(path: &Path, out_override: Option<&Path>) -> CliResult<RunOutput> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: cannot read config: {e}", path.display())))?;
    let origin = path.display().to_string();
    let mut cfg = parse_config(&text, &origin)?;
    if let Some(o) = out_override {
        cfg.output_dir = Some(o.to_path_buf());
    }
    run_config(cfg).map_err(|e| match e {
        CliError::Runtime(SbmError::InvalidParam { name, reason }) => at_line(
            &origin,
            &text,
            name,
            format!("invalid parameter `{name}`: {reason}"),
        ),
        CliError::Runtime(e @ SbmError::Cfl { .. }) => at_line(&origin, &text, "dt", e.to_string()),
        CliError::Config(m) if !m.starts_with(&origin) => {
            CliError::Config(format!("{origin}: {m}"))
        }
        other => other,
    })
}

pub fn run_config(mut cfg: RunConfig) -> CliResult<RunOutput> {
    let started = Instant::now();
    let exp = cfg
        .experiment
        .ok_or_else(|| CliError::Config("missing required field \"experiment\"".into()))?;
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    let dir = cfg
        .output_dir
        .get_or_insert_with(|| PathBuf::from("sbm-out"))
        .clone();
    let mut r = Resolved {
        seeds: SeedPlan::new(seed),
        n: 0,
        cfg,
    };
    let mut out = RunOutput {
        dir: dir.clone(),
        ..Default::default()
    };
    // Validate fully before touching the filesystem.
    let job = plan(exp, &mut r)?;
    fs::create_dir_all(&dir)?;
    let outcome = job(&r, &mut out);
    let manifest = json!({
        "manifest_version": 1,
        "sbm_version": VERSION,
        "experiment": exp,
        "config": r.cfg,
        "outputs": out.files,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    out.write_json("manifest.json", &manifest)?;
    outcome?;
    if let Some(rep) = &out.verify {
        if rep.verdict == Verdict::Fail {
            return Err(CliError::VerifyFailed(Box::new(rep.clone())));
        }
    }
    Ok(out)
}

type Job = Box<dyn FnOnce(&Resolved, &mut RunOutput) -> CliResult<()>>;

fn replicas(r: &mut Resolved, default: usize) -> usize {
    let n = *r.cfg.n_replicas.get_or_insert(default);
    r.n = n;
    n
}

fn horizon(r: &Resolved, exp: Experiment) -> CliResult<f64> {
    let t = require(r.cfg.t, "T", exp)?;
    if !(t >= 0.0) {
        return Err(CliError::Config("\"T\" must be nonnegative".into()));
    }
    Ok(t)
}

fn plan(exp: Experiment, r: &mut Resolved) -> CliResult<Job> {
    match exp {
        Experiment::Simulate => plan_simulate(r),
        Experiment::DualMoment => plan_dual(r),
        Experiment::Interface => plan_interface(r),
        Experiment::Moments => plan_moments(r),
        Experiment::SelfDuality => plan_self_duality(r),
        Experiment::Scaling => plan_scaling(r),
        Experiment::Brownian => plan_brownian(r),
        Experiment::Verify => plan_verify(r),
    }
}

fn plan_simulate(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::Simulate;
    let t = horizon(r, exp)?;
    let params = model_params(&mut r.cfg, exp, t)?;
    let n = replicas(r, 1);
    let ic_kind = *r.cfg.ic.get_or_insert(InitialCondition::Heaviside);
    let times = r
        .cfg
        .record_times
        .get_or_insert_with(|| vec![0.0, t])
        .clone();
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let ic = ic_kind.build(&params.grid);
        let runs = run_replicas(n, |k| simulate(&ic, t, &params, r.seeds, k, &times));
        let mut summary = Vec::with_capacity(n);
        for (k, run) in runs.into_iter().enumerate() {
            let run = run?;
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, &run.trajectory, &params)?;
            if k == 0 {
                out.write("results.csv", &buf)?;
            } else {
                fs::create_dir_all(out.dir.join("trajectories"))?;
                out.write(&format!("trajectories/replica_{k:05}.csv"), &buf)?;
            }
            let mut row = json!({
                "replica": k,
                "clamp_fraction": run.clamp_fraction,
                "lambda_total": run.lambda.values.iter().sum::<f64>() * params.grid.dx(),
            });
            if params.gamma == 0.0 && ic_kind == InitialCondition::Heaviside && t > 0.0 {
                let fin = &run.final_state;
                row["heat_sup_error"] =
                    json!(
                        sup_error(&fin.u, &params, |x| heat_of_left_step(x, t), 0.0).max(
                            sup_error(&fin.v, &params, |x| heat_of_left_step(-x, t), 0.0)
                        )
                    );
            }
            summary.push(row);
        }
        out.write_json(
            "results.json",
            &json!({ "experiment": "simulate", "replicas": summary }),
        )
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    One,
    HeavisideLeft,
    HeavisideRight,
}

fn profile(p: InitialProfile) -> fn(f64) -> f64 {
    fn one(_: f64) -> f64 {
        1.0
    }
    fn left(x: f64) -> f64 {
        (x < 0.0) as u8 as f64
    }
    fn right(x: f64) -> f64 {
        (x > 0.0) as u8 as f64
    }
    match p {
        InitialProfile::One => one,
        InitialProfile::HeavisideLeft => left,
        InitialProfile::HeavisideRight => right,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualOptions {
    pub positions: Vec<f64>,
    /// 1 or 2 per particle.
    pub colours: Vec<u8>,
    pub u0: InitialProfile,
    pub v0: InitialProfile,
    pub kind: EstimatorKind,
    pub dual_dt: f64,
    pub eps_factors: Vec<f64>,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            positions: vec![0.0, 0.0],
            colours: vec![1, 2],
            u0: InitialProfile::One,
            v0: InitialProfile::One,
            kind: EstimatorKind::ProductMoment,
            dual_dt: 1e-3,
            eps_factors: vec![4.0, 2.0, 1.0],
        }
    }
}

fn plan_dual(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::DualMoment;
    let t = horizon(r, exp)?;
    let rho = require(r.cfg.rho, "rho", exp)?;
    let gamma = require(r.cfg.gamma, "gamma", exp)?;
    let n = replicas(r, 10_000);
    let o: DualOptions = options(&mut r.cfg)?;
    let colours = o
        .colours
        .iter()
        .map(|&c| match c {
            1 => Ok(Colour::One),
            2 => Ok(Colour::Two),
            _ => Err(CliError::Config(format!("colour {c} is not 1 or 2"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    if o.eps_factors.is_empty() || !(o.dual_dt > 0.0) {
        return Err(CliError::Config(
            "\"dual_dt\" must be positive and \"eps_factors\" nonempty".into(),
        ));
    }
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let (u0, v0) = (profile(o.u0), profile(o.v0));
        let q = DualQuery {
            positions: o.positions.clone(),
            colours,
            u0: &u0,
            v0: &v0,
            t,
            kind: o.kind,
        };
        let est = extrapolated_estimate(&q, gamma, rho, o.dual_dt, &o.eps_factors, n, r.seeds)?;
        let mut csv = String::from("eps,value,std_error,n_replicas\n");
        for (e, m) in est
            .eps
            .iter()
            .zip(&est.per_eps)
            .chain([(&0.0, &est.extrapolated)])
        {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                e, m.value, m.std_error, m.n_replicas
            ));
        }
        out.write("results.csv", csv.as_bytes())?;
        out.write_json("results.json", &est)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterfaceOptions {
    pub eps: f64,
    pub tol: f64,
    /// Exponent of the reported width moments.
    pub p: f64,
}

impl Default for InterfaceOptions {
    fn default() -> Self {
        Self {
            eps: 0.05,
            tol: 0.0,
            p: 0.5,
        }
    }
}

fn plan_interface(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::Interface;
    let t = horizon(r, exp)?;
    let params = model_params(&mut r.cfg, exp, t)?;
    let n = replicas(r, 100);
    let ic_kind = *r.cfg.ic.get_or_insert(InitialCondition::Heaviside);
    let times = r.cfg.record_times.get_or_insert_with(|| vec![t]).clone();
    let o: InterfaceOptions = options(&mut r.cfg)?;
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let ic = ic_kind.build(&params.grid);
        let rows: Vec<Vec<(f64, InterfaceStats)>> = run_replicas(n, |k| {
            interface_series(&ic, &times, o.eps, o.tol, &params, r.seeds, k)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let mut buf = Vec::new();
        write_interface_csv(&mut buf, &rows)?;
        out.write("results.csv", &buf)?;
        let moments: Vec<Value> = (0..times.len())
            .map(|j| {
                let w: Vec<f64> = rows.iter().map(|s| s[j].1.width.powf(o.p)).collect();
                json!({"T": rows[0][j].0, "p": o.p, "width_moment": MomentEstimate::from_samples(&w)})
            })
            .collect();
        out.write_json(
            "results.json",
            &json!({"experiment": "interface", "eps": o.eps, "width_moments": moments}),
        )
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentOp {
    Boundedness,
    IntegratedFourth,
    IQ,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentOptions {
    pub op: MomentOp,
    /// Moment order for `boundedness`.
    pub p: u32,
    /// Exponent for `i-q`.
    pub q: f64,
    /// `(x, "u" | "v")` evaluation points for `mixed`.
    pub points: Vec<(f64, Species)>,
    pub n_dual: usize,
    pub dual_dt: f64,
    pub n_batches: usize,
    pub alpha: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            op: MomentOp::IntegratedFourth,
            p: 2,
            q: 0.5,
            points: vec![(0.0, Species::U), (0.0, Species::V)],
            n_dual: 20_000,
            dual_dt: 1e-3,
            n_batches: 10,
            alpha: 0.05,
        }
    }
}

fn write_records(out: &mut RunOutput, records: &[MomentRecord]) -> CliResult<()> {
    let mut csv = String::from("op,T,value,std_error,trend_verdict\n");
    for m in records {
        let verdict = m
            .trend_verdict
            .map(|v| {
                serde_json::to_value(v)
                    .expect("serialisable")
                    .as_str()
                    .unwrap_or("")
                    .to_string()
            })
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            m.op, m.t, m.value, m.std_error, verdict
        ));
    }
    out.write("results.csv", csv.as_bytes())?;
    out.write_json("results.json", &records)
}

fn plan_moments(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::Moments;
    let o: MomentOptions = options(&mut r.cfg)?;
    let rho = require(r.cfg.rho, "rho", exp)?;
    let gamma = require(r.cfg.gamma, "gamma", exp)?;
    match o.op {
        MomentOp::Boundedness => {
            let dx = require(r.cfg.dx, "dx", exp)?;
            let t_list = r
                .cfg
                .t_list
                .clone()
                .ok_or_else(|| CliError::Config("missing required field \"T_list\"".into()))?;
            let n = replicas(r, 2000);
            let settings = ProbeSettings {
                dx,
                dual_dt: o.dual_dt,
                n_spde: n,
                n_dual: o.n_dual,
                n_batches: o.n_batches,
                alpha: o.alpha,
            };
            Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
                let rep = boundedness_probe(o.p, rho, gamma, &t_list, &settings, r.seeds)?;
                let mut recs = Vec::new();
                for (path, ests, trend) in [
                    ("spde", &rep.spde, rep.spde_trend.verdict),
                    ("dual", &rep.dual, rep.dual_trend.verdict),
                ] {
                    for (t, e) in t_list.iter().zip(ests) {
                        recs.push(MomentRecord {
                            op: format!("boundedness-{path}"),
                            params: json!({"p": o.p, "rho": rho, "gamma": gamma}),
                            t: *t,
                            value: e.value,
                            std_error: e.std_error,
                            trend_verdict: Some(trend),
                        });
                    }
                }
                if let Some(exact) = &rep.exact {
                    for (t, v) in t_list.iter().zip(exact) {
                        recs.push(MomentRecord {
                            op: "boundedness-exact".into(),
                            params: json!({"p": o.p, "rho": rho, "gamma": gamma}),
                            t: *t,
                            value: *v,
                            std_error: 0.0,
                            trend_verdict: None,
                        });
                    }
                }
                write_records(out, &recs)
            }))
        }
        MomentOp::IntegratedFourth => {
            let t_list = r
                .cfg
                .t_list
                .clone()
                .ok_or_else(|| CliError::Config("missing required field \"T_list\"".into()))?;
            let t_max = t_list.iter().cloned().fold(0.0, f64::max);
            let params = model_params(&mut r.cfg, exp, t_max)?;
            let n = replicas(r, 1000);
            let ic_kind = *r.cfg.ic.get_or_insert(InitialCondition::Heaviside);
            Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
                let ic = ic_kind.build(&params.grid);
                let grid = params.grid;
                let samples = functional_samples(&ic, &t_list, &params, n, r.seeds, |s| {
                    Ok(integrated_fourth_sample(s, &grid))
                })?;
                let trend = classify_trend(&samples, o.n_batches, o.alpha);
                let recs: Vec<MomentRecord> = t_list
                    .iter()
                    .zip(&samples)
                    .map(|(t, s)| {
                        let e = MomentEstimate::from_samples(s);
                        MomentRecord {
                            op: "integrated-fourth".into(),
                            params: json!({"rho": rho, "gamma": gamma}),
                            t: *t,
                            value: e.value,
                            std_error: e.std_error,
                            trend_verdict: Some(trend.verdict),
                        }
                    })
                    .collect();
                write_records(out, &recs)
            }))
        }
        MomentOp::IQ | MomentOp::Mixed => {
            let t = horizon(r, exp)?;
            let params = model_params(&mut r.cfg, exp, t)?;
            let n = replicas(r, 1000);
            let ic_kind = *r.cfg.ic.get_or_insert(InitialCondition::Heaviside);
            Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
                let ic = ic_kind.build(&params.grid);
                let (name, e, extra) = if o.op == MomentOp::IQ {
                    (
                        "i-q",
                        i_q_moment(&ic, o.q, t, &params, n, r.seeds)?,
                        json!({"q": o.q}),
                    )
                } else {
                    (
                        "mixed",
                        spde_mixed_moment(&ic, &o.points, t, &params, n, r.seeds)?,
                        json!({"points": o.points}),
                    )
                };
                let mut p = json!({"rho": rho, "gamma": gamma});
                p.as_object_mut()
                    .expect("object")
                    .extend(extra.as_object().expect("object").clone());
                write_records(
                    out,
                    &[MomentRecord {
                        op: name.into(),
                        params: p,
                        t,
                        value: e.value,
                        std_error: e.std_error,
                        trend_verdict: None,
                    }],
                )
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfDualityOptions {
    /// Second initial condition; the first is `ic`.
    pub ic2: InitialCondition,
    pub allowance: f64,
}

impl Default for SelfDualityOptions {
    fn default() -> Self {
        Self {
            ic2: InitialCondition::OffsetGaussians { c: 1.0, sigma: 0.5 },
            allowance: 0.01,
        }
    }
}

fn plan_self_duality(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::SelfDuality;
    let t = horizon(r, exp)?;
    let params = model_params(&mut r.cfg, exp, t)?;
    let n = replicas(r, 4000);
    let ic_kind = *r.cfg.ic.get_or_insert(InitialCondition::Heaviside);
    let o: SelfDualityOptions = options(&mut r.cfg)?;
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let ic1 = ic_kind.build(&params.grid);
        let ic2 = o.ic2.build(&params.grid);
        let rep = self_duality_check(&ic1, &ic2, t, &params, n, r.seeds, o.allowance)?;
        out.write_json("results.json", &rep)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingOptions {
    pub k: f64,
    pub point_pairs: Vec<(f64, f64)>,
    pub eps: f64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            k: 4.0,
            point_pairs: vec![(0.0, 0.0), (-0.25, 0.25), (-0.5, 0.0)],
            eps: 0.05,
        }
    }
}

fn plan_scaling(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::Scaling;
    let t = horizon(r, exp)?;
    let rho = require(r.cfg.rho, "rho", exp)?;
    let gamma = require(r.cfg.gamma, "gamma", exp)?;
    let dx = require(r.cfg.dx, "dx", exp)?;
    let n = replicas(r, 4000);
    let o: ScalingOptions = options(&mut r.cfg)?;
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let rep =
            scaling_equivalence_check(o.k, t, gamma, rho, dx, &o.point_pairs, o.eps, n, r.seeds)?;
        out.write_json("results.json", &rep)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrownianOp {
    Levy,
    LocalTimeTail,
    CollisionTail,
    CollisionTailBand,
    Occupation,
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrownianOptions {
    pub op: BrownianOp,
    pub z: f64,
    pub alpha: f64,
    pub dt: f64,
    pub eps: f64,
    /// Laplace decay rate.
    pub s: f64,
    pub z_max: f64,
}

impl Default for BrownianOptions {
    fn default() -> Self {
        Self {
            op: BrownianOp::Levy,
            z: 0.0,
            alpha: 1.0,
            dt: 1e-4,
            eps: 0.02,
            s: 1.0,
            z_max: 6.0,
        }
    }
}

fn plan_brownian(r: &mut Resolved) -> CliResult<Job> {
    let exp = Experiment::Brownian;
    let o: BrownianOptions = options(&mut r.cfg)?;
    let n = replicas(r, 20_000);
    let t = if o.op == BrownianOp::Laplace {
        0.0
    } else {
        horizon(r, exp)?
    };
    let t_list = if o.op == BrownianOp::Laplace {
        r.cfg
            .t_list
            .clone()
            .ok_or_else(|| CliError::Config("missing required field \"T_list\"".into()))?
    } else {
        Vec::new()
    };
    Ok(Box::new(move |r: &Resolved, out: &mut RunOutput| {
        let s = r.seeds;
        let v = match o.op {
            BrownianOp::Levy => {
                serde_json::to_value(levy_identity_check(o.z, t, n, o.dt, o.eps, s))
            }
            BrownianOp::LocalTimeTail => {
                serde_json::to_value(local_time_tail_check(o.z, o.alpha, t, n, s))
            }
            BrownianOp::CollisionTail => {
                serde_json::to_value(collision_tail_exact_check(o.z, o.alpha, t, n, s))
            }
            BrownianOp::CollisionTailBand => serde_json::to_value(collision_tail_check(
                0.0, o.z, o.alpha, t, o.dt, o.eps, n, s,
            )),
            BrownianOp::Occupation => {
                let h = |z: f64, s: f64| (-z * z).exp() * s;
                serde_json::to_value(occupation_formula_check(&h, t, o.dt, o.eps, o.z_max, n, s))
            }
            BrownianOp::Laplace => serde_json::to_value(laplace_bound_check(o.s, &t_list, n, s)),
        }
        .expect("serialisable");
        out.write_json("results.json", &v)
    }))
}

fn plan_verify(r: &mut Resolved) -> CliResult<Job> {
    let suite = r.cfg.suite.ok_or_else(|| {
        CliError::Config("missing required field \"suite\" for experiment \"verify\"".into())
    })?;
    let opts = VerifyOptions {
        seed: r.cfg.seed.unwrap_or(DEFAULT_SEED),
        replicas: r.cfg.n_replicas,
    };
    Ok(Box::new(move |_: &Resolved, out: &mut RunOutput| {
        let rep = run_suite(suite, &opts)?;
        out.write_json("results.json", &rep)?;
        out.verify = Some(rep);
        Ok(())
    }))
}

/// Report bytes for `sbm verify`, identical to the `results.json` of a
/// `verify` run.
pub fn report_json(rep: &VerifyReport) -> String {
    let mut s = serde_json::to_string_pretty(rep).expect("serialisable");
    s.push('\n');
    s
}

/// Writes one summary line per criterion.
pub fn print_summary(w: &mut impl Write, rep: &VerifyReport) -> std::io::Result<()> {
    for c in &rep.criteria {
        writeln!(w, "{}", c.summary())?;
    }
    writeln!(w, "overall: {:?}", rep.verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_params_are_flattened() {
        let text =
            r#"{"experiment": "simulate", "params": {"rho": 0.1, "gamma": 0, "dx": 0.1}, "T": 1}"#;
        let cfg = parse_config(text, "c.json").unwrap();
        assert_eq!(cfg.rho, Some(0.1));
        assert_eq!(cfg.experiment, Some(Experiment::Simulate));
    }

    #[test]
    fn unknown_fields_and_duplicates_are_rejected() {
        let err =
            parse_config("{\"experiment\": \"simulate\",\n \"rh0\": 1}", "c.json").unwrap_err();
        assert!(err.to_string().starts_with("c.json:2:"), "{err}");
        let dup = r#"{"experiment": "simulate", "rho": 0, "params": {"rho": 1}}"#;
        assert!(parse_config(dup, "c.json")
            .unwrap_err()
            .to_string()
            .contains("given twice"));
        assert!(parse_config(r#"{"experiment": "nope"}"#, "c.json").is_err());
        assert!(parse_config(r#"{"rho": 0}"#, "c.json")
            .unwrap_err()
            .to_string()
            .contains("experiment"));
    }

    #[test]
    fn missing_rho_is_named() {
        let cfg = parse_config(
            r#"{"experiment": "simulate", "gamma": 0, "dx": 0.1, "T": 1}"#,
            "c",
        )
        .unwrap();
        let err = run_config(cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("\"rho\""), "{err}");
    }

    #[test]
    fn manifest_config_is_accepted() {
        let text =
            r#"{"manifest_version": 1, "config": {"experiment": "verify", "suite": "heat"}}"#;
        assert_eq!(parse_config(text, "m").unwrap().suite, Some(Suite::Heat));
    }

    #[test]
    fn line_lookup() {
        assert_eq!(line_of("{\n\"a\": 1,\n\"rho\": 2}", "rho"), Some(3));
        assert_eq!(line_of("{}", "rho"), None);
    }
}
