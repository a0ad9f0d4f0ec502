//! Euler–Maruyama simulation under a relaxed policy and Monte Carlo
//! estimators for the four cost criteria.
//!
//! Drift and running cost are both averaged over the policy's measure at each
//! step. Paths live inside the ball of radius `R`: a step that lands outside is
//! projected back onto the sphere and counted, and a state beyond `10 R` is a
//! blow-up. Path `i` always consumes normal variates from its own stream, so
//! estimates do not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::format_f64;
use crate::model::ControlModel;
use crate::policy::{Action, ActionGrid, Policy};
use crate::rng::PathRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    FiniteHorizon,
    Discounted,
    Ergodic,
    Exit,
}

impl Criterion {
    pub const ALL: [Criterion; 4] =
        [Criterion::FiniteHorizon, Criterion::Discounted, Criterion::Ergodic, Criterion::Exit];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::FiniteHorizon => "finite_horizon",
            Criterion::Discounted => "discounted",
            Criterion::Ergodic => "ergodic",
            Criterion::Exit => "exit",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion `{s}` (expected finite_horizon, discounted, ergodic or exit)"))
    }
}

fn default_radius() -> f64 {
    100.0
}

fn default_max_time() -> f64 {
    1e3
}

fn default_substeps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Truncation radius `R`.
    #[serde(default = "default_radius")]
    pub truncation_radius: f64,
    /// Cap on simulated time for exit problems.
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    /// Each step's Brownian increment is the sum of this many normal draws.
    /// Runs at `dt` with `s` substeps and at `dt/2` with `s/2` substeps then
    /// share their noise path by path.
    #[serde(default = "default_substeps")]
    pub noise_substeps: usize,
}

impl SimConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            n_paths,
            seed,
            truncation_radius: default_radius(),
            max_time: default_max_time(),
            noise_substeps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSimConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidSimConfig("n_paths must be at least 1".into()));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(Error::InvalidSimConfig("truncation_radius must be positive".into()));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::InvalidSimConfig("max_time must be positive".into()));
        }
        if self.noise_substeps == 0 {
            return Err(Error::InvalidSimConfig("noise_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of one criterion under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub criterion: Criterion,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub policy_id: String,
    pub model_id: String,
    /// Fraction of steps projected back onto the truncation sphere.
    pub reflected_fraction: f64,
    /// Bound on the bias from truncating the discounted integral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_bound: Option<f64>,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "criterion,estimate,std_error,n_paths,dt,seed,policy_id,model_id";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.criterion,
            format_f64(self.estimate),
            format_f64(self.std_error),
            self.n_paths,
            format_f64(self.dt),
            self.seed,
            csv_field(&self.policy_id),
            csv_field(&self.model_id)
        )
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-path values of one estimator, in path order.
#[derive(Debug, Clone)]
pub struct PathSamples {
    pub values: Vec<f64>,
    pub steps: u64,
    pub reflected: u64,
    /// Largest running cost seen on any step.
    pub max_cost: f64,
}

impl PathSamples {
    /// Sample mean and its standard error (zero when all values coincide).
    pub fn mean_and_se(&self) -> (f64, f64) {
        mean_and_se(&self.values)
    }
}

/// Pairwise summation, deterministic for a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Running sum in blocks of 256 plain additions, the blocks combined with
/// Kahan compensation: accurate without a long dependency chain per step.
#[derive(Default)]
struct Accumulator {
    block: f64,
    count: u32,
    total: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    fn add(&mut self, v: f64) {
        self.block += v;
        self.count += 1;
        if self.count == 256 {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let y = self.block - self.comp;
        let t = self.total + y;
        self.comp = (t - self.total) - y;
        self.total = t;
        self.block = 0.0;
        self.count = 0;
    }

    fn finish(mut self) -> f64 {
        self.flush();
        self.total
    }
}

/// Mean and standard error `s / √n` of the values.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if v.iter().all(|x| x.to_bits() == v[0].to_bits()) {
        return (v[0], 0.0);
    }
    let mean = pairwise_sum(v) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error of `a_i - b_i` for samples driven by the same noise.
pub fn paired_difference(a: &PathSamples, b: &PathSamples) -> (f64, f64) {
    assert_eq!(a.values.len(), b.values.len(), "paired samples need equal path counts");
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    mean_and_se(&diff)
}

/// When a simulated path ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run to time `T` (the step is shrunk so it divides `T`).
    Horizon(f64),
    /// Run until the first grid time outside the model's exit domain.
    Exit,
}

/// One simulated trajectory: `states[k]` is the state at `times[k]` and
/// `actions[k]` the measure applied on `[times[k], times[k+1])`.
#[derive(Debug, Clone)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action<'static>>,
    pub reflected: u64,
}

/// Step count and uniform step for a fixed horizon: the largest step `≤ dt`
/// that divides `T`.
pub(crate) fn horizon_steps(t: f64, dt: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, dt);
    }
    let n = ((t / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, t / n as f64)
}

struct Stepper<'a> {
    model: &'a ControlModel,
    policy: &'a Policy,
    grid: &'a ActionGrid,
    d: usize,
    vars: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    sigma_const: bool,
    noise: Vec<f64>,
    substeps: usize,
    scale: f64,
    radius2: f64,
    blowup2: f64,
    radius: f64,
    want_cost: bool,
    want_discount: bool,
    action_free: bool,
    /// Cost and discount when no coefficient depends on anything; `drift` then holds the constant drift.
    constant: Option<(f64, f64)>,
    reflected: u64,
}

impl<'a> Stepper<'a> {
    fn new(
        model: &'a ControlModel,
        policy: &'a Policy,
        cfg: &SimConfig,
        dt: f64,
        want_cost: bool,
        want_discount: bool,
    ) -> Self {
        let d = model.dim_x();
        let mut sigma = vec![0.0; d * d];
        let sigma_const = model.sigma_is_constant();
        if sigma_const {
            model.sigma_into(&model.scratch(), &mut sigma).expect("constant sigma evaluates");
        }
        let r = cfg.truncation_radius;
        let drift_const: Option<Vec<f64>> = model.drift_terms().iter().map(|t| t.constant()).collect();
        let cost_const = if want_cost { model.cost_term().constant() } else { Some(0.0) };
        let disc_const = match (want_discount, model.exit()) {
            (true, Some(e)) => e.discount.constant(),
            _ => Some(0.0),
        };
        let constant = match (model.action_free(), &drift_const, cost_const, disc_const) {
            (true, Some(_), Some(c), Some(q)) => Some((c, q)),
            _ => None,
        };
        Stepper {
            model,
            policy,
            grid: policy.action_grid(),
            d,
            vars: model.scratch(),
            drift: drift_const.unwrap_or_else(|| vec![0.0; d]),
            constant,
            sigma,
            sigma_const,
            noise: vec![0.0; d],
            substeps: cfg.noise_substeps,
            scale: (dt / cfg.noise_substeps as f64).sqrt(),
            radius2: r * r,
            blowup2: 100.0 * r * r,
            radius: r,
            want_cost,
            want_discount,
            action_free: model.action_free(),
            reflected: 0,
        }
    }

    /// Advances `x` from time `t` by `dt`; returns the relaxed running cost
    /// and exit discount at the left endpoint.
    #[inline]
    fn step(&mut self, t: f64, x: &mut [f64], dt: f64, rng: &mut PathRng) -> Result<(f64, f64)> {
        let d = self.d;
        let (c, disc) = if let Some(cq) = self.constant {
            cq
        } else if self.action_free {
            self.model.load_state(&mut self.vars, x, t);
            // the measure integrates to one, so the policy need not be consulted
            self.model.drift_at(&self.vars, &mut self.drift)?;
            let c = if self.want_cost { self.model.cost_at(&self.vars)? } else { 0.0 };
            let disc = if self.want_discount { self.model.exit_discount_at(&self.vars)? } else { 0.0 };
            (c, disc)
        } else {
            self.model.load_state(&mut self.vars, x, t);
            let action = self.policy.act(t, x);
            self.model.relaxed_at(
                &mut self.vars,
                self.grid,
                &action,
                &mut self.drift,
                self.want_cost,
                self.want_discount,
            )?
        };
        if !self.sigma_const {
            self.model.load_state(&mut self.vars, x, t);
            self.model.sigma_into(&self.vars, &mut self.sigma)?;
        }
        if d == 1 {
            let mut z = rng.normal();
            for _ in 1..self.substeps {
                z += rng.normal();
            }
            x[0] += self.drift[0] * dt + self.scale * (self.sigma[0] * z);
            return self.confine(t + dt, x, x[0] * x[0]).map(|_| (c, disc));
        }
        if self.substeps == 1 {
            for z in self.noise.iter_mut() {
                *z = rng.normal();
            }
        } else {
            self.noise.iter_mut().for_each(|z| *z = 0.0);
            for _ in 0..self.substeps {
                for z in self.noise.iter_mut() {
                    *z += rng.normal();
                }
            }
        }
        let mut norm2 = 0.0;
        for i in 0..d {
            let mut diff = 0.0;
            for j in 0..d {
                diff += self.sigma[i * d + j] * self.noise[j];
            }
            x[i] += self.drift[i] * dt + self.scale * diff;
            norm2 += x[i] * x[i];
        }
        self.confine(t + dt, x, norm2)?;
        Ok((c, disc))
    }

    #[inline]
    fn confine(&mut self, t: f64, x: &mut [f64], norm2: f64) -> Result<()> {
        if !(norm2 <= self.radius2) {
            if !(norm2 <= self.blowup2) {
                return Err(Error::NumericalBlowup { t, norm: norm2.sqrt() });
            }
            let s = self.radius / norm2.sqrt();
            x.iter_mut().for_each(|v| *v *= s);
            self.reflected += 1;
        }
        Ok(())
    }
}

fn check_inputs(model: &ControlModel, policy: &Policy, x0: &[f64], cfg: &SimConfig) -> Result<()> {
    cfg.validate()?;
    if x0.len() != model.dim_x() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSimConfig(format!("x0 must be a finite vector of length {}", model.dim_x())));
    }
    let grid = policy.action_grid();
    if grid.dim() != model.dim_u() {
        return Err(Error::InvalidPolicy(format!(
            "policy actions have dimension {}, model expects {}",
            grid.dim(),
            model.dim_u()
        )));
    }
    if let Some(a) = grid.atoms().find(|a| !model.action_box().contains(a)) {
        return Err(Error::OutOfBox(a.to_vec()));
    }
    Ok(())
}

/// Runs `per_path(index)` for every path in parallel and gathers results in path order.
fn run_paths<F>(n: usize, per_path: F) -> Result<PathSamples>
where
    F: Fn(u64) -> Result<(f64, u64, u64, f64)> + Sync,
{
    let results: Vec<Result<(f64, u64, u64, f64)>> = (0..n as u64).into_par_iter().map(&per_path).collect();
    let mut values = Vec::with_capacity(n);
    let (mut steps, mut reflected, mut max_cost) = (0u64, 0u64, f64::NEG_INFINITY);
    for r in results {
        let (v, s, refl, mc) = r?;
        values.push(v);
        steps += s;
        reflected += refl;
        max_cost = max_cost.max(mc);
    }
    Ok(PathSamples { values, steps, reflected, max_cost })
}

/// Simulates one trajectory (path index 0 of the seed's streams).
pub fn simulate_path(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    stop: StopRule,
) -> Result<Path> {
    simulate_path_indexed(model, policy, x0, cfg, stop, 0)
}

pub fn simulate_path_indexed(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    stop: StopRule,
    path: u64,
) -> Result<Path> {
    check_inputs(model, policy, x0, cfg)?;
    let mut rng = PathRng::new(cfg.seed, path);
    let mut x = x0.to_vec();
    let mut out = Path { times: vec![0.0], states: vec![x.clone()], actions: Vec::new(), reflected: 0 };
    match stop {
        StopRule::Horizon(t_end) => {
            let (n, h) = horizon_steps(t_end, cfg.dt);
            let mut st = Stepper::new(model, policy, cfg, h, false, false);
            for k in 0..n {
                let t = k as f64 * h;
                out.actions.push(policy.act(t, &x).into_owned());
                st.step(t, &mut x, h, &mut rng)?;
                out.times.push(if k + 1 == n { t_end } else { (k + 1) as f64 * h });
                out.states.push(x.clone());
            }
            out.reflected = st.reflected;
        }
        StopRule::Exit => {
            let domain = model.exit().ok_or_else(|| Error::InvalidModel("model has no exit domain".into()))?;
            let mut st = Stepper::new(model, policy, cfg, cfg.dt, false, false);
            let mut k = 0usize;
            while domain.contains(&x) {
                let t = k as f64 * cfg.dt;
                if t > cfg.max_time {
                    return Err(Error::MaxTimeExceeded(cfg.max_time));
                }
                out.actions.push(policy.act(t, &x).into_owned());
                st.step(t, &mut x, cfg.dt, &mut rng)?;
                k += 1;
                out.times.push(k as f64 * cfg.dt);
                out.states.push(x.clone());
            }
            out.reflected = st.reflected;
        }
    }
    Ok(out)
}

fn report(
    criterion: Criterion,
    samples: &PathSamples,
    model: &ControlModel,
    policy: &Policy,
    cfg: &SimConfig,
    dt: f64,
) -> CostReport {
    let (estimate, std_error) = samples.mean_and_se();
    CostReport {
        criterion,
        estimate,
        std_error,
        n_paths: samples.values.len(),
        dt,
        seed: cfg.seed,
        policy_id: policy.id().to_string(),
        model_id: model.id().to_string(),
        reflected_fraction: if samples.steps == 0 { 0.0 } else { samples.reflected as f64 / samples.steps as f64 },
        tail_bound: None,
    }
}

/// Per-path `∫₀ᵀ c dt + H(X_T)` by the left-endpoint rule, `T` from the model.
pub fn finite_horizon_samples(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<PathSamples> {
    let t_end = model.horizon().ok_or_else(|| Error::InvalidModel("finite-horizon cost needs a horizon".into()))?;
    finite_horizon_samples_to(model, policy, x0, cfg, t_end)
}

fn finite_horizon_samples_to(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    t_end: f64,
) -> Result<PathSamples> {
    check_inputs(model, policy, x0, cfg)?;
    let (n, h) = horizon_steps(t_end, cfg.dt);
    let terminal = model.terminal();
    run_paths(cfg.n_paths, |path| {
        let mut rng = PathRng::new(cfg.seed, path);
        let mut st = Stepper::new(model, policy, cfg, h, true, false);
        let mut x = x0.to_vec();
        let mut acc = Accumulator::default();
        let mut max_c = f64::NEG_INFINITY;
        for k in 0..n {
            let (c, _) = st.step(k as f64 * h, &mut x, h, &mut rng)?;
            max_c = max_c.max(c);
            acc.add(c);
        }
        let sum = acc.finish();
        let running = if n == 0 { 0.0 } else { t_end * (sum / n as f64) };
        let hx = match terminal {
            Some(term) => {
                let mut vars = model.scratch();
                model.load_state(&mut vars, &x, t_end);
                term.eval(&vars)?
            }
            None => 0.0,
        };
        Ok((running + hx, n as u64, st.reflected, max_c))
    })
}

pub fn mc_finite_horizon(model: &ControlModel, policy: &Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostReport> {
    let samples = finite_horizon_samples(model, policy, x0, cfg)?;
    let t_end = model.horizon().unwrap_or(0.0);
    Ok(report(Criterion::FiniteHorizon, &samples, model, policy, cfg, horizon_steps(t_end, cfg.dt).1))
}

/// Per-path `Σ_k w_k c_k` with exact exponential weights
/// `w_k = e^{-α t_k} (1 - e^{-α h}) / α` on `[0, t_max]`.
pub fn discounted_samples(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    t_max: f64,
) -> Result<PathSamples> {
    check_inputs(model, policy, x0, cfg)?;
    let alpha = model.alpha().ok_or_else(|| Error::InvalidModel("discounted cost needs alpha".into()))?;
    if !(t_max > 0.0) {
        return Err(Error::InvalidSimConfig("t_max must be positive".into()));
    }
    let (n, h) = horizon_steps(t_max, cfg.dt);
    let unit = -(-alpha * h).exp_m1() / alpha;
    let weights: Vec<f64> = (0..n).map(|k| (-alpha * k as f64 * h).exp() * unit).collect();
    run_paths(cfg.n_paths, |path| {
        let mut rng = PathRng::new(cfg.seed, path);
        let mut st = Stepper::new(model, policy, cfg, h, true, false);
        let mut x = x0.to_vec();
        let mut acc = Accumulator::default();
        let mut max_c = f64::NEG_INFINITY;
        for (k, w) in weights.iter().enumerate() {
            let (c, _) = st.step(k as f64 * h, &mut x, h, &mut rng)?;
            max_c = max_c.max(c);
            acc.add(w * c);
        }
        Ok((acc.finish(), n as u64, st.reflected, max_c))
    })
}

pub fn mc_discounted(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    t_max: f64,
) -> Result<CostReport> {
    let samples = discounted_samples(model, policy, x0, cfg, t_max)?;
    let alpha = model.alpha().unwrap_or(1.0);
    let mut r = report(Criterion::Discounted, &samples, model, policy, cfg, horizon_steps(t_max, cfg.dt).1);
    r.tail_bound = Some((-alpha * t_max).exp() * samples.max_cost.max(0.0) / alpha);
    Ok(r)
}

/// Per-path time average of `c` over `[burn_in, burn_in + t_avg]`.
pub fn ergodic_samples(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    burn_in: f64,
    t_avg: f64,
) -> Result<PathSamples> {
    check_inputs(model, policy, x0, cfg)?;
    if !policy.is_stationary() {
        return Err(Error::InvalidPolicy("ergodic cost needs a stationary policy".into()));
    }
    if !(burn_in >= 0.0 && t_avg > 0.0) {
        return Err(Error::InvalidSimConfig("need burn_in >= 0 and t_avg > 0".into()));
    }
    let dt = cfg.dt;
    let n_burn = if burn_in > 0.0 { ((burn_in / dt) - 1e-9).ceil() as usize } else { 0 };
    let n_avg = ((t_avg / dt) - 1e-9).ceil().max(1.0) as usize;
    run_paths(cfg.n_paths, |path| {
        let mut rng = PathRng::new(cfg.seed, path);
        let mut st = Stepper::new(model, policy, cfg, dt, true, false);
        let mut x = x0.to_vec();
        for k in 0..n_burn {
            st.step(k as f64 * dt, &mut x, dt, &mut rng)?;
        }
        let mut acc = Accumulator::default();
        let mut max_c = f64::NEG_INFINITY;
        for k in n_burn..n_burn + n_avg {
            let (c, _) = st.step(k as f64 * dt, &mut x, dt, &mut rng)?;
            max_c = max_c.max(c);
            acc.add(c);
        }
        Ok((acc.finish() / n_avg as f64, (n_burn + n_avg) as u64, st.reflected, max_c))
    })
}

pub fn mc_ergodic(
    model: &ControlModel,
    policy: &Policy,
    x0: &[f64],
    cfg: &SimConfig,
    burn_in: f64,
    t_avg: f64,
) -> Result<CostReport> {
    let samples = ergodic_samples(model, policy, x0, cfg, burn_in, t_avg)?;
    Ok(report(Criterion::Ergodic, &samples, model, policy, cfg, cfg.dt))
}

/// Per-path discounted cost until the first grid time outside the exit
/// domain, plus the discounted payoff `h` where the last step crosses the boundary.
pub fn exit_samples(model: &ControlModel, policy: &Policy, x0: &[f64], cfg: &SimConfig) -> Result<PathSamples> {
    check_inputs(model, policy, x0, cfg)?;
    let domain = model.exit().ok_or_else(|| Error::InvalidModel("exit cost needs an exit domain".into()))?;
    if !domain.contains(x0) {
        return Err(Error::InvalidSimConfig("x0 must lie inside the exit domain".into()));
    }
    let dt = cfg.dt;
    let discount_zero = domain.discount.constant() == Some(0.0);
    let max_steps = (cfg.max_time / dt).ceil() as usize;
    run_paths(cfg.n_paths, |path| {
        let mut rng = PathRng::new(cfg.seed, path);
        let mut st = Stepper::new(model, policy, cfg, dt, true, !discount_zero);
        let mut x = x0.to_vec();
        let mut prev = x0.to_vec();
        let mut acc = Accumulator::default();
        let mut factor = 1.0;
        let mut max_c = f64::NEG_INFINITY;
        let mut k = 0usize;
        loop {
            if k >= max_steps {
                return Err(Error::MaxTimeExceeded(cfg.max_time));
            }
            for (p, v) in prev.iter_mut().zip(&x) {
                *p = *v;
            }
            let (c, delta) = st.step(k as f64 * dt, &mut x, dt, &mut rng)?;
            k += 1;
            max_c = max_c.max(c);
            acc.add(factor * c * dt);
            if !discount_zero {
                factor *= (-delta * dt).exp();
            }
            if !domain.contains(&x) {
                break;
            }
        }
        let hit = domain.crossing(&prev, &x);
        let mut vars = model.scratch();
        model.load_state(&mut vars, &hit, k as f64 * dt);
        let payoff = domain.terminal.eval(&vars)?;
        Ok((acc.finish() + factor * payoff, k as u64, st.reflected, max_c))
    })
}

pub fn mc_exit(model: &ControlModel, policy: &Policy, x0: &[f64], cfg: &SimConfig) -> Result<CostReport> {
    let samples = exit_samples(model, policy, x0, cfg)?;
    Ok(report(Criterion::Exit, &samples, model, policy, cfg, cfg.dt))
}
