//! Controlled diffusion model `dX = b(X, U, t) dt + σ(X) dW` with running
//! cost, terminal cost, discount and exit-domain data.
//!
//! Every expression is parsed against one shared variable layout
//! `[x1..xd, u1..uk, t]`, so a single scratch buffer serves all of them.
//! Relaxed controls are handled by averaging drift and cost over the atoms
//! of a finitely supported measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Compiled, Expr};
use crate::policy::{Action, ActionGrid, ProbabilityVector};

/// Compact box `[low, high]` in action space with the Euclidean metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::InvalidModel("action box bounds must have equal nonzero length".into()));
        }
        for (l, h) in low.iter().zip(&high) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidModel(format!("action box needs finite low < high, got [{l}, {h}]")));
            }
        }
        Ok(ActionBox { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, zeta: &[f64]) -> bool {
        zeta.len() == self.dim() && zeta.iter().enumerate().all(|(i, &z)| z >= self.low[i] && z <= self.high[i])
    }

    pub fn clamp(&self, zeta: &mut [f64]) {
        for (i, z) in zeta.iter_mut().enumerate() {
            *z = z.clamp(self.low[i], self.high[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Discount rate δ(x, u) ≥ 0.
    #[serde(default = "zero_src")]
    pub discount: String,
    /// Boundary payoff h(x).
    #[serde(default = "zero_src")]
    pub terminal: String,
}

fn zero_src() -> String {
    "0".into()
}

fn default_model_id() -> String {
    "model".into()
}

/// Declarative model description, as read from the `[model]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_model_id")]
    pub id: String,
    pub dim_x: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Drift components in (x, u, t).
    pub drift: Vec<String>,
    /// Row-major σ entries in x.
    pub sigma: Vec<Vec<String>>,
    /// Running cost in (x, u, t).
    pub cost: String,
    /// Terminal cost H(x) for finite-horizon problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit: Option<ExitSpec>,
}

/// An expression kept alongside its compiled form.
#[derive(Debug, Clone)]
pub struct Term {
    pub expr: Expr,
    compiled: Compiled,
}

impl Term {
    fn new(expr: Expr) -> Self {
        let compiled = expr.compile();
        Term { expr, compiled }
    }

    #[inline]
    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        Ok(self.compiled.eval(vars)?)
    }

    pub fn constant(&self) -> Option<f64> {
        self.compiled.constant()
    }
}

#[derive(Debug, Clone)]
pub struct ExitDomain {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub discount: Term,
    pub terminal: Term,
}

impl ExitDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| v > self.low[i] && v < self.high[i])
    }

    /// Point where the segment `from -> to` first leaves the box; `from` must be inside.
    pub fn crossing(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        let mut lambda: f64 = 1.0;
        for i in 0..from.len() {
            let d = to[i] - from[i];
            if to[i] >= self.high[i] && d > 0.0 {
                lambda = lambda.min((self.high[i] - from[i]) / d);
            } else if to[i] <= self.low[i] && d < 0.0 {
                lambda = lambda.min((self.low[i] - from[i]) / d);
            }
        }
        let lambda = lambda.clamp(0.0, 1.0);
        from.iter().zip(to).map(|(a, b)| a + lambda * (b - a)).collect()
    }
}

/// The model tuple (b, σ, c, U, α, δ, h, H, T) with compiled coefficients.
#[derive(Debug, Clone)]
pub struct ControlModel {
    spec: ModelSpec,
    dim_x: usize,
    action: ActionBox,
    drift: Vec<Term>,
    sigma: Vec<Term>,
    sigma_const: Option<Vec<f64>>,
    cost: Term,
    terminal: Option<Term>,
    exit: Option<ExitDomain>,
    action_free: bool,
    time_dependent: bool,
}

/// Result of sampled assumption checks; see [`ControlModel::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub min_cost: f64,
    pub negative_cost_at: Option<Vec<f64>>,
    pub degenerate_at: Option<Vec<f64>>,
    /// Largest finite-difference slope of drift/σ in x over the samples.
    pub lipschitz_estimate: f64,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.negative_cost_at.is_none() && self.degenerate_at.is_none()
    }
}

impl ControlModel {
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let d = spec.dim_x;
        if d == 0 {
            return Err(Error::InvalidModel("dim_x must be positive".into()));
        }
        let action = ActionBox::new(spec.action_low.clone(), spec.action_high.clone())?;
        let k = action.dim();
        let names = var_names(d, k);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let xs: Vec<usize> = (0..d).collect();
        let xu: Vec<usize> = (0..d + k).collect();
        let all: Vec<usize> = (0..=d + k).collect();
        let parse = |src: &str, allowed: &[usize]| -> Result<Term> {
            let e = parse_expr(src, &names).map_err(|e| Error::parse(src, e))?;
            e.restrict_to(allowed).map_err(|e| Error::parse(src, e))?;
            Ok(Term::new(e))
        };
        if spec.drift.len() != d {
            return Err(Error::InvalidModel(format!("drift needs {d} components, got {}", spec.drift.len())));
        }
        let drift = spec.drift.iter().map(|s| parse(s, &all)).collect::<Result<Vec<_>>>()?;
        if spec.sigma.len() != d || spec.sigma.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidModel(format!("sigma must be {d}x{d}")));
        }
        let sigma = spec.sigma.iter().flatten().map(|s| parse(s, &xs)).collect::<Result<Vec<_>>>()?;
        let sigma_const = sigma.iter().map(Term::constant).collect::<Option<Vec<f64>>>();
        let cost = parse(&spec.cost, &all)?;
        let terminal = spec.terminal.as_deref().map(|s| parse(s, &xs)).transpose()?;
        let exit = match &spec.exit {
            None => None,
            Some(e) => {
                if e.low.len() != d || e.high.len() != d || e.low.iter().zip(&e.high).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidModel("exit domain must be a nonempty box in state space".into()));
                }
                Some(ExitDomain {
                    low: e.low.clone(),
                    high: e.high.clone(),
                    discount: parse(&e.discount, &xu)?,
                    terminal: parse(&e.terminal, &xs)?,
                })
            }
        };
        if let Some(a) = spec.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidModel(format!("alpha must be positive, got {a}")));
            }
        }
        if let Some(t) = spec.horizon {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidModel(format!("horizon must be nonnegative, got {t}")));
            }
        }
        let uses_u = |t: &Term| t.expr.slots().iter().any(|&s| s >= d && s < d + k);
        let action_free =
            !drift.iter().any(uses_u) && !uses_u(&cost) && !exit.as_ref().is_some_and(|e| uses_u(&e.discount));
        let uses_t = |t: &Term| t.expr.slots().contains(&(d + k));
        let time_dependent = drift.iter().any(uses_t) || uses_t(&cost);
        Ok(ControlModel {
            dim_x: d,
            action,
            drift,
            sigma,
            sigma_const,
            cost,
            terminal,
            exit,
            action_free,
            time_dependent,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_u(&self) -> usize {
        self.action.dim()
    }

    pub fn action_box(&self) -> &ActionBox {
        &self.action
    }

    pub fn alpha(&self) -> Option<f64> {
        self.spec.alpha
    }

    pub fn horizon(&self) -> Option<f64> {
        self.spec.horizon
    }

    pub fn exit(&self) -> Option<&ExitDomain> {
        self.exit.as_ref()
    }

    pub fn terminal(&self) -> Option<&Term> {
        self.terminal.as_ref()
    }

    pub fn cost_term(&self) -> &Term {
        &self.cost
    }

    pub fn drift_terms(&self) -> &[Term] {
        &self.drift
    }

    /// True when drift, cost and exit discount ignore the action, so every
    /// policy induces the same dynamics and cost.
    pub fn action_free(&self) -> bool {
        self.action_free
    }

    /// True when drift or cost read the time variable.
    pub fn time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// Length of the scratch buffer expected by the `*_at` evaluators.
    pub fn vars_len(&self) -> usize {
        self.dim_x + self.dim_u() + 1
    }

    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.vars_len()]
    }

    #[inline]
    pub fn load_state(&self, vars: &mut [f64], x: &[f64], t: f64) {
        for (v, xi) in vars[..self.dim_x].iter_mut().zip(x) {
            *v = *xi;
        }
        vars[self.dim_x + self.dim_u()] = t;
    }

    #[inline]
    pub fn load_action(&self, vars: &mut [f64], zeta: &[f64]) {
        for (v, z) in vars[self.dim_x..self.dim_x + zeta.len()].iter_mut().zip(zeta) {
            *v = *z;
        }
    }

    /// Drift at the state/action currently loaded in `vars`.
    #[inline]
    pub fn drift_at(&self, vars: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, term) in out.iter_mut().zip(&self.drift) {
            *o = term.eval(vars)?;
        }
        Ok(())
    }

    #[inline]
    pub fn cost_at(&self, vars: &[f64]) -> Result<f64> {
        self.cost.eval(vars)
    }

    /// Exit discount δ at the loaded state/action (0 without an exit domain).
    #[inline]
    pub fn exit_discount_at(&self, vars: &[f64]) -> Result<f64> {
        match &self.exit {
            Some(e) => e.discount.eval(vars),
            None => Ok(0.0),
        }
    }

    /// Relaxed drift `Σ w_i b(x, ζ_i, t)` and, when requested, relaxed cost and
    /// exit discount, for the state already loaded in `vars`.
    pub fn relaxed_at(
        &self,
        vars: &mut [f64],
        grid: &ActionGrid,
        action: &Action<'_>,
        drift_out: &mut [f64],
        want_cost: bool,
        want_discount: bool,
    ) -> Result<(f64, f64)> {
        let d = self.dim_x;
        let mut buf = [0.0f64; 8];
        let tmp = &mut buf[..d.min(8)];
        let mut cost = 0.0;
        let mut disc = 0.0;
        let mut single = |vars: &mut [f64], zeta: &[f64], w: f64, first: bool, drift_out: &mut [f64]| -> Result<()> {
            self.load_action(vars, zeta);
            if d <= 8 {
                self.drift_at(vars, tmp)?;
                for (o, b) in drift_out.iter_mut().zip(tmp.iter()) {
                    *o = if first { w * b } else { *o + w * b };
                }
            } else {
                let mut big = vec![0.0; d];
                self.drift_at(vars, &mut big)?;
                for (o, b) in drift_out.iter_mut().zip(&big) {
                    *o = if first { w * b } else { *o + w * b };
                }
            }
            if want_cost {
                cost += w * self.cost_at(vars)?;
            }
            if want_discount {
                disc += w * self.exit_discount_at(vars)?;
            }
            Ok(())
        };
        match action {
            Action::Atom(i) => single(vars, grid.atom(*i), 1.0, true, drift_out)?,
            Action::Point(p) => single(vars, p, 1.0, true, drift_out)?,
            Action::Mixture(pairs) => {
                drift_out.iter_mut().for_each(|o| *o = 0.0);
                for &(i, w) in pairs.iter() {
                    if w != 0.0 {
                        single(vars, grid.atom(i), w, false, drift_out)?;
                    }
                }
            }
        }
        Ok((cost, disc))
    }

    /// Relaxed drift `b(x, ν, t) = Σ_i ν_i b(x, ζ_i, t)` for a probability vector on `grid`.
    pub fn eval_drift(&self, x: &[f64], grid: &ActionGrid, nu: &ProbabilityVector, t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim_x {
            return Err(Error::InvalidModel(format!("state has dimension {}, expected {}", x.len(), self.dim_x)));
        }
        if nu.len() != grid.len() {
            return Err(Error::InvalidPolicy("probability vector does not match the action grid".into()));
        }
        for i in nu.support() {
            if !self.action.contains(grid.atom(i)) {
                return Err(Error::OutOfBox(grid.atom(i).to_vec()));
            }
        }
        let mut vars = self.scratch();
        self.load_state(&mut vars, x, t);
        let mut out = vec![0.0; self.dim_x];
        let action = nu.as_action();
        self.relaxed_at(&mut vars, grid, &action, &mut out, false, false)?;
        Ok(out)
    }

    /// Relaxed running cost `c(x, ν, t)`.
    pub fn eval_cost(&self, x: &[f64], grid: &ActionGrid, nu: &ProbabilityVector, t: f64) -> Result<f64> {
        let mut vars = self.scratch();
        self.load_state(&mut vars, x, t);
        let mut out = vec![0.0; self.dim_x];
        Ok(self.relaxed_at(&mut vars, grid, &nu.as_action(), &mut out, true, false)?.0)
    }

    /// σ(x), row-major.
    #[inline]
    pub fn sigma_into(&self, vars: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(c) = &self.sigma_const {
            out.copy_from_slice(c);
            return Ok(());
        }
        for (o, t) in out.iter_mut().zip(&self.sigma) {
            *o = t.eval(vars)?;
        }
        Ok(())
    }

    pub fn sigma_is_constant(&self) -> bool {
        self.sigma_const.is_some()
    }

    /// `a(x) = ½ σσᵀ` (row-major, exactly symmetric), without the definiteness check.
    pub fn diffusion_matrix_unchecked(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim_x;
        let mut vars = self.scratch();
        vars[..d].copy_from_slice(x);
        let mut s = vec![0.0; d * d];
        self.sigma_into(&vars, &mut s)?;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = 0.5 * (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum::<f64>();
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
                m[i * d + j] = avg;
                m[j * d + i] = avg;
            }
        }
        Ok(m)
    }

    /// `a(x) = ½ σσᵀ`, checked positive definite by Cholesky.
    pub fn eval_diffusion_matrix(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.diffusion_matrix_unchecked(x)?;
        if !is_positive_definite(&m, self.dim_x) {
            return Err(Error::NondegeneracyViolation(x.to_vec()));
        }
        Ok(m)
    }

    /// Sampled spot checks of nonnegative cost, nondegeneracy and a
    /// finite-difference Lipschitz estimate, over `states` × grid atoms.
    pub fn validate(&self, states: &[Vec<f64>], atoms: &ActionGrid) -> Result<ValidationReport> {
        let mut vars = self.scratch();
        let d = self.dim_x;
        let mut report = ValidationReport {
            samples: 0,
            min_cost: f64::INFINITY,
            negative_cost_at: None,
            degenerate_at: None,
            lipschitz_estimate: 0.0,
        };
        let eps = 1e-6;
        let mut b0 = vec![0.0; d];
        let mut b1 = vec![0.0; d];
        for x in states {
            if report.degenerate_at.is_none() && self.eval_diffusion_matrix(x).is_err() {
                report.degenerate_at = Some(x.clone());
            }
            for i in 0..atoms.len() {
                self.load_state(&mut vars, x, 0.0);
                self.load_action(&mut vars, atoms.atom(i));
                let c = self.cost_at(&vars)?;
                report.samples += 1;
                if c < report.min_cost {
                    report.min_cost = c;
                }
                if c < 0.0 && report.negative_cost_at.is_none() {
                    let mut at = x.clone();
                    at.extend_from_slice(atoms.atom(i));
                    report.negative_cost_at = Some(at);
                }
                self.drift_at(&vars, &mut b0)?;
                for a in 0..d {
                    vars[a] += eps;
                    self.drift_at(&vars, &mut b1)?;
                    vars[a] -= eps;
                    let slope = b0.iter().zip(&b1).map(|(p, q)| (q - p).abs()).fold(0.0, f64::max) / eps;
                    report.lipschitz_estimate = report.lipschitz_estimate.max(slope);
                }
            }
            if !self.sigma_is_constant() {
                let mut base = vec![0.0; d * d];
                let mut bumped = vec![0.0; d * d];
                self.load_state(&mut vars, x, 0.0);
                self.sigma_into(&vars, &mut base)?;
                for a in 0..d {
                    vars[a] += eps;
                    self.sigma_into(&vars, &mut bumped)?;
                    vars[a] -= eps;
                    let slope = base.iter().zip(&bumped).map(|(p, q)| (q - p).abs()).fold(0.0, f64::max) / eps;
                    report.lipschitz_estimate = report.lipschitz_estimate.max(slope);
                }
            }
        }
        Ok(report)
    }
}

pub(crate) fn var_names(d: usize, k: usize) -> Vec<String> {
    (1..=d)
        .map(|i| format!("x{i}"))
        .chain((1..=k).map(|i| format!("u{i}")))
        .chain(std::iter::once("t".to_string()))
        .collect()
}

fn is_positive_definite(m: &[f64], d: usize) -> bool {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = m[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::build_action_grid;

    pub(crate) fn spec_1d(drift: &str, sigma: &str, cost: &str) -> ModelSpec {
        ModelSpec {
            id: "test".into(),
            dim_x: 1,
            action_low: vec![-4.0],
            action_high: vec![4.0],
            drift: vec![drift.into()],
            sigma: vec![vec![sigma.into()]],
            cost: cost.into(),
            terminal: None,
            alpha: Some(1.0),
            horizon: None,
            exit: None,
        }
    }

    fn atoms(v: &[f64]) -> ActionGrid {
        let b = ActionBox::new(vec![-4.0], vec![4.0]).unwrap();
        ActionGrid::from_atoms(b, v.iter().map(|&z| vec![z]).collect()).unwrap()
    }

    #[test]
    fn relaxed_drift_examples() {
        let m = ControlModel::from_spec(spec_1d("-x1 + u1", "1", "0")).unwrap();
        let g = atoms(&[0.5]);
        let nu = ProbabilityVector::new(vec![1.0]).unwrap();
        assert_eq!(m.eval_drift(&[1.0], &g, &nu, 0.0).unwrap(), vec![-0.5]);
        let g = atoms(&[-1.0, 1.0]);
        let nu = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(m.eval_drift(&[0.0], &g, &nu, 0.0).unwrap(), vec![0.0]);
        let m = ControlModel::from_spec(spec_1d("u1^2", "1", "0")).unwrap();
        let g = atoms(&[0.0, 2.0]);
        for x in [-3.0, 0.0, 5.0] {
            assert_eq!(m.eval_drift(&[x], &g, &nu, 0.0).unwrap(), vec![2.0]);
        }
    }

    #[test]
    fn relaxed_drift_is_affine_in_the_measure() {
        let m = ControlModel::from_spec(spec_1d("sin(x1) * u1^3 - u1 * t", "1", "0")).unwrap();
        let g = atoms(&[-2.0, -0.3, 0.7, 3.1]);
        let n1 = ProbabilityVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let n2 = ProbabilityVector::new(vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            let mix: Vec<f64> =
                n1.weights().iter().zip(n2.weights()).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let mix = ProbabilityVector::new(mix).unwrap();
            let x = [0.9];
            let lhs = m.eval_drift(&x, &g, &mix, 0.3).unwrap()[0];
            let rhs = lambda * m.eval_drift(&x, &g, &n1, 0.3).unwrap()[0]
                + (1.0 - lambda) * m.eval_drift(&x, &g, &n2, 0.3).unwrap()[0];
            assert!((lhs - rhs).abs() < 1e-12, "lambda {lambda}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn diffusion_matrix_examples() {
        let m = ControlModel::from_spec(spec_1d("0", "sqrt(2)", "0")).unwrap();
        let a = m.eval_diffusion_matrix(&[0.3]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15);

        let mut spec = spec_1d("0", "1", "0");
        spec.dim_x = 2;
        spec.drift = vec!["0".into(), "0".into()];
        spec.sigma = vec![vec!["1".into(), "0".into()], vec!["0".into(), "2".into()]];
        let m = ControlModel::from_spec(spec).unwrap();
        assert_eq!(m.eval_diffusion_matrix(&[0.0, 0.0]).unwrap(), vec![0.5, 0.0, 0.0, 2.0]);

        let m = ControlModel::from_spec(spec_1d("0", "0", "0")).unwrap();
        assert!(matches!(m.eval_diffusion_matrix(&[1.0]), Err(Error::NondegeneracyViolation(_))));
    }

    #[test]
    fn diffusion_matrix_is_exactly_symmetric() {
        let mut spec = spec_1d("0", "1", "0");
        spec.dim_x = 2;
        spec.drift = vec!["0".into(), "0".into()];
        spec.sigma = vec![vec!["1 + 0.1*sin(x1)".into(), "0.3*x2".into()], vec!["0.7".into(), "2 + cos(x2)".into()]];
        let m = ControlModel::from_spec(spec).unwrap();
        for x in [[0.1, 0.2], [-1.3, 2.9], [4.0, -0.7]] {
            let a = m.eval_diffusion_matrix(&x).unwrap();
            assert_eq!(a[1].to_bits(), a[2].to_bits());
        }
    }

    #[test]
    fn sigma_may_not_depend_on_the_action() {
        let err = ControlModel::from_spec(spec_1d("0", "1 + u1", "0")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn validation_flags_negative_cost_and_degeneracy() {
        let m = ControlModel::from_spec(spec_1d("-x1 + u1", "x1", "x1 - 1")).unwrap();
        let g = build_action_grid(m.action_box(), 1);
        let states: Vec<Vec<f64>> = (-2..=2).map(|i| vec![i as f64]).collect();
        let r = m.validate(&states, &g).unwrap();
        assert!(r.negative_cost_at.is_some());
        assert_eq!(r.degenerate_at, Some(vec![0.0]));
        assert!((r.lipschitz_estimate - 1.0).abs() < 1e-3);
        assert!(!r.ok());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let m = ControlModel::from_spec(spec_1d("tanh(x1) * u1 + exp(-t)", "1", "x1^2 + u1^2")).unwrap();
        let g = atoms(&[-1.0, 0.25, 2.0]);
        let nu = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let a = m.eval_drift(&[0.7], &g, &nu, 0.4).unwrap();
        let b = m.eval_drift(&[0.7], &g, &nu, 0.4).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert!(m.eval_cost(&[0.7], &g, &nu, 0.4).unwrap() > 0.0);
    }
}
