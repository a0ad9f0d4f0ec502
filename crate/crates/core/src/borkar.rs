//! Test pairings `∫ f(x) ∫ g(x, ζ) v(x)(dζ) dx` and the pseudo-distance they
//! induce between policies.
//!
//! A finite bank of `(f, g)` pairs stands in for the full family of test
//! functions; the pseudo-distance `Σ_j 2^{-(j+1)} |Δ_j| / (1 + |Δ_j|)` over the
//! bank is the convergence diagnostic reported by the studies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Compiled};
use crate::grid::Grid;
use crate::model::var_names;
use crate::policy::Policy;

/// A bank entry as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPairSpec {
    pub id: String,
    /// Integrable profile in `x1..xd` and `t`.
    pub f: String,
    /// Bounded test function in `x1..xd`, `u1..uk` and `t`.
    pub g: String,
    /// Lipschitz constant of `g` in the action (max-norm), when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_u: Option<f64>,
}

/// A compiled test pair with its quadrature grid.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub spec: TestPairSpec,
    f: Compiled,
    g: Compiled,
    dim_x: usize,
    dim_u: usize,
    quadrature: Grid,
    /// Trapezoid nodes in time for Markov pairings.
    pub time_points: usize,
}

impl TestPair {
    pub fn new(spec: TestPairSpec, dim_x: usize, dim_u: usize, quadrature: Grid) -> Result<Self> {
        if quadrature.dim() != dim_x {
            return Err(Error::InvalidGrid(format!(
                "quadrature grid has dimension {}, state has {dim_x}",
                quadrature.dim()
            )));
        }
        let names = var_names(dim_x, dim_u);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut f_slots: Vec<usize> = (0..dim_x).collect();
        f_slots.push(dim_x + dim_u);
        let all: Vec<usize> = (0..=dim_x + dim_u).collect();
        let compile = |src: &str, allowed: &[usize]| -> Result<Compiled> {
            let e = parse_expr(src, &names).map_err(|e| Error::parse(src, e))?;
            e.restrict_to(allowed).map_err(|e| Error::parse(src, e))?;
            Ok(e.compile())
        };
        let f = compile(&spec.f, &f_slots)?;
        let g = compile(&spec.g, &all)?;
        Ok(TestPair { spec, f, g, dim_x, dim_u, quadrature, time_points: 101 })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn quadrature(&self) -> &Grid {
        &self.quadrature
    }

    pub fn with_time_points(mut self, points: usize) -> Self {
        self.time_points = points.max(2);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingResult {
    pub pair_id: String,
    pub policy_id: String,
    pub value: f64,
    /// Richardson estimate `|I_h − I_2h| / 3`; `None` when the grid cannot be halved.
    pub quadrature_error: Option<f64>,
    /// `∫|f|` by the same rule.
    pub abs_f_integral: f64,
    /// Largest `|g|` met during the quadrature.
    pub g_sup: f64,
}

struct Sums {
    value: f64,
    abs_f: f64,
    g_sup: f64,
}

/// Trapezoid weights of `n` equally spaced nodes on `[0, T]`.
fn time_nodes(horizon: f64, n: usize) -> Vec<(f64, f64)> {
    let h = horizon / (n - 1) as f64;
    (0..n)
        .map(|j| {
            let w = if j == 0 || j + 1 == n { 0.5 * h } else { h };
            (j as f64 * h, w)
        })
        .collect()
}

fn integrate(pair: &TestPair, policy: &Policy, grid: &Grid, times: &[(f64, f64)]) -> Result<Sums> {
    let (d, k) = (pair.dim_x, pair.dim_u);
    let action_grid = policy.action_grid();
    let mut vars = vec![0.0; d + k + 1];
    let mut x = vec![0.0; d];
    let mut out = Sums { value: 0.0, abs_f: 0.0, g_sup: 0.0 };
    for &(t, wt) in times {
        vars[d + k] = t;
        for node in 0..grid.len() {
            grid.node_coords(node, &mut x);
            vars[..d].copy_from_slice(&x);
            let w = wt * grid.trapezoid_weight(node);
            let f = pair.f.eval(&vars)?;
            if f == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            let mut err = None;
            policy.act(t, &x).for_each(action_grid, |zeta, p| {
                vars[d..d + k].copy_from_slice(zeta);
                match pair.g.eval(&vars) {
                    Ok(g) => {
                        out.g_sup = out.g_sup.max(g.abs());
                        inner += p * g;
                    }
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e.into());
            }
            out.value += w * f * inner;
            out.abs_f += w * f.abs();
        }
    }
    Ok(out)
}

fn result(pair: &TestPair, policy: &Policy, fine: Sums, coarse: Option<Sums>) -> PairingResult {
    PairingResult {
        pair_id: pair.id().to_string(),
        policy_id: policy.id().to_string(),
        value: fine.value,
        quadrature_error: coarse.map(|c| (fine.value - c.value).abs() / 3.0),
        abs_f_integral: fine.abs_f,
        g_sup: fine.g_sup,
    }
}

/// `∫ f(x) Σ_i w_i(x) g(x, ζ_i) dx` by the tensor trapezoid rule, at `t = 0`.
pub fn pairing(pair: &TestPair, policy: &Policy) -> Result<PairingResult> {
    if !policy.is_stationary() {
        return Err(Error::InvalidPolicy(format!("pairing needs a stationary policy, `{}` is not", policy.id())));
    }
    let at_zero = [(0.0, 1.0)];
    let fine = integrate(pair, policy, &pair.quadrature, &at_zero)?;
    let coarse = match pair.quadrature.coarsened() {
        Some(g) => Some(integrate(pair, policy, &g, &at_zero)?),
        None => None,
    };
    Ok(result(pair, policy, fine, coarse))
}

/// `∫₀ᵀ ∫ f(t, x) Σ_i w_i(t, x) g(x, t, ζ_i) dx dt`, trapezoid in time too.
pub fn pairing_markov(pair: &TestPair, policy: &Policy, horizon: f64) -> Result<PairingResult> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidModel(format!("pairing horizon must be positive, got {horizon}")));
    }
    let n = pair.time_points;
    let fine = integrate(pair, policy, &pair.quadrature, &time_nodes(horizon, n))?;
    let coarse = match (pair.quadrature.coarsened(), (n - 1).is_multiple_of(2) && n >= 5) {
        (Some(g), true) => Some(integrate(pair, policy, &g, &time_nodes(horizon, (n - 1) / 2 + 1))?),
        _ => None,
    };
    Ok(result(pair, policy, fine, coarse))
}

/// Pairings of one policy against every bank entry, in bank order.
pub fn pairings(bank: &[TestPair], policy: &Policy, horizon: Option<f64>) -> Result<Vec<PairingResult>> {
    bank.par_iter()
        .map(|p| match horizon {
            Some(t) => pairing_markov(p, policy, t),
            None => pairing(p, policy),
        })
        .collect()
}

/// `Σ_j 2^{-(j+1)} |a_j − b_j| / (1 + |a_j − b_j|)` over paired bank values.
pub fn distance_from_values(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pairing vectors differ in length");
    let mut weight = 0.5;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = (x - y).abs();
        acc += weight * diff / (1.0 + diff);
        weight *= 0.5;
    }
    acc
}

/// Bank pseudo-distance between two policies; stationary pairings unless a
/// horizon is given.
pub fn pseudo_distance(v1: &Policy, v2: &Policy, bank: &[TestPair], horizon: Option<f64>) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::config("bank", "the test-pair bank is empty"));
    }
    let values =
        |p: &Policy| -> Result<Vec<f64>> { Ok(pairings(bank, p, horizon)?.into_iter().map(|r| r.value).collect()) };
    Ok(distance_from_values(&values(v1)?, &values(v2)?))
}

/// The shipped bank: Gaussian bumps and smoothed boxes in `x`, paired with
/// bounded functions of the action that are 1-Lipschitz in max-norm.
pub fn default_bank(dim_x: usize, dim_u: usize) -> Vec<TestPairSpec> {
    let xs: Vec<String> = (1..=dim_x).map(|i| format!("x{i}")).collect();
    let gauss = |c: f64, s: f64| {
        let norm = (2.0 * std::f64::consts::PI * s * s).powf(dim_x as f64 / 2.0);
        let quad: Vec<String> = xs.iter().map(|x| format!("({x} - {c})^2")).collect();
        format!("exp(-({}) / {}) / {norm}", quad.join(" + "), 2.0 * s * s)
    };
    let smooth_box = |lo: f64, hi: f64| {
        xs.iter()
            .map(|x| format!("0.5 * (tanh(8 * ({x} - {lo})) - tanh(8 * ({x} - {hi})))"))
            .collect::<Vec<_>>()
            .join(" * ")
    };
    let u_mean = if dim_u == 1 {
        "u1".to_string()
    } else {
        format!("({}) / {dim_u}", (1..=dim_u).map(|i| format!("u{i}")).collect::<Vec<_>>().join(" + "))
    };
    let pair = |id: &str, f: String, g: String| TestPairSpec { id: id.into(), f, g, lip_u: Some(1.0) };
    vec![
        pair("gauss0_tanh", gauss(0.0, 1.0), format!("tanh({u_mean})")),
        pair("gauss1_sin", gauss(1.0, 0.5), format!("sin({u_mean})")),
        pair("gaussm1_sat", gauss(-1.0, 0.5), format!("{u_mean} / (1 + abs({u_mean}))")),
        pair("box_cos", smooth_box(-1.0, 1.0), format!("cos(x1 + {u_mean})")),
        pair("gauss0_xtanh", gauss(0.0, 1.5), format!("x1 * tanh({u_mean}) / (1 + x1^2)")),
        pair("box2_clip", smooth_box(0.5, 2.5), format!("min(1, max(-1, {u_mean}))")),
    ]
}

/// Compiles bank specs against one quadrature grid.
pub fn build_bank(specs: &[TestPairSpec], dim_x: usize, dim_u: usize, quadrature: &Grid) -> Result<Vec<TestPair>> {
    specs.iter().map(|s| TestPair::new(s.clone(), dim_x, dim_u, quadrature.clone())).collect()
}
