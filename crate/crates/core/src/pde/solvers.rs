//! Policy evaluation: discounted, exit-time and ergodic Poisson equations.

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, Grid};
use crate::model::ControlModel;
use crate::policy::Policy;

use super::generator::{discretize_generator, DiscreteGenerator};
use super::linalg::{solve, BandedLu, CsrMatrix, RESIDUAL_TARGET};

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub residual_inf_norm: f64,
    /// Refinement sweeps for a linear solve, improvement rounds for policy iteration.
    pub iterations: usize,
    pub field: DiscreteField,
    /// The optimal or average cost `ρ` for ergodic solves.
    pub scalar_out: Option<f64>,
}

impl SolveReport {
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.field.value_at(x)
    }
}

fn require_stationary(policy: &Policy) -> Result<()> {
    if policy.is_stationary() {
        Ok(())
    } else {
        Err(Error::InvalidPolicy(format!("policy `{}` must be stationary for this solver", policy.id())))
    }
}

/// `diag(shift) − L` on free nodes, identity rows on Dirichlet nodes.
pub(crate) fn shifted_system(gen: &DiscreteGenerator, shift: impl Fn(usize) -> f64) -> CsrMatrix {
    let mut a = gen.matrix.clone();
    a.map_entries(|_, _, v| -v);
    for i in 0..a.len() {
        if gen.boundary[i].is_some() {
            a.set_identity_row(i);
        } else {
            *a.diagonal_mut(i) += shift(i);
        }
    }
    a
}

/// Right-hand side: `c` on free nodes, the boundary value on Dirichlet nodes.
pub(crate) fn boundary_rhs(gen: &DiscreteGenerator, free: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..gen.cost.len()).map(|i| gen.boundary[i].unwrap_or_else(|| free(i))).collect()
}

/// `(α − L) V = c` with the model's discount rate.
pub fn solve_discounted(model: &ControlModel, policy: &Policy, grid: &Grid) -> Result<SolveReport> {
    let alpha = model.alpha().ok_or_else(|| Error::InvalidModel("discounted criterion needs `alpha`".into()))?;
    solve_discounted_with_alpha(model, policy, grid, alpha)
}

/// Discounted evaluation at an explicit rate, used by the vanishing-discount check.
pub fn solve_discounted_with_alpha(
    model: &ControlModel,
    policy: &Policy,
    grid: &Grid,
    alpha: f64,
) -> Result<SolveReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidModel(format!("alpha must be positive, got {alpha}")));
    }
    require_stationary(policy)?;
    let gen = discretize_generator(model, policy, grid)?;
    evaluate_discounted(&gen, grid, alpha)
}

pub(crate) fn evaluate_discounted(gen: &DiscreteGenerator, grid: &Grid, alpha: f64) -> Result<SolveReport> {
    let a = shifted_system(gen, |_| alpha);
    let b = boundary_rhs(gen, |i| gen.cost[i]);
    let s = solve(&a, &b)?;
    Ok(SolveReport {
        residual_inf_norm: s.residual_inf_norm,
        iterations: s.refinements,
        field: DiscreteField::new(grid.clone(), s.x)?,
        scalar_out: None,
    })
}

/// Grid of the exit problem: the model's exit box with every face Dirichlet at `h`.
pub fn exit_grid(model: &ControlModel, grid: &Grid) -> Result<Grid> {
    let exit = model.exit().ok_or_else(|| Error::InvalidModel("exit criterion needs an `exit` domain".into()))?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    let same = (0..grid.dim()).all(|k| close(exit.low[k], grid.low()[k]) && close(exit.high[k], grid.high()[k]));
    if grid.dim() != exit.low.len() || !same {
        return Err(Error::InvalidGrid(format!(
            "exit domain [{:?}, {:?}] differs from the grid box [{:?}, {:?}]",
            exit.low,
            exit.high,
            grid.low(),
            grid.high()
        )));
    }
    let terminal = &model.spec().exit.as_ref().expect("exit domain has a spec").terminal;
    grid.with_dirichlet(terminal)
}

/// `(δ − L) ψ = c` inside the exit box, `ψ = h` on its boundary.
///
/// Any boundary conditions on `grid` are replaced by the exit payoff.
pub fn solve_exit(model: &ControlModel, policy: &Policy, grid: &Grid) -> Result<SolveReport> {
    require_stationary(policy)?;
    let grid = exit_grid(model, grid)?;
    let gen = discretize_generator(model, policy, &grid)?;
    evaluate_exit(&gen, &grid)
}

pub(crate) fn evaluate_exit(gen: &DiscreteGenerator, grid: &Grid) -> Result<SolveReport> {
    let a = shifted_system(gen, |i| gen.discount[i]);
    let b = boundary_rhs(gen, |i| gen.cost[i]);
    let s = solve(&a, &b)?;
    Ok(SolveReport {
        residual_inf_norm: s.residual_inf_norm,
        iterations: s.refinements,
        field: DiscreteField::new(grid.clone(), s.x)?,
        scalar_out: None,
    })
}

/// `L V + c = ρ` with `V(0) = 0`, Neumann faces.
///
/// With `M = −L + e_o e_oᵀ` (o the origin node), `M V = −L V` whenever
/// `V_o = 0`, so `V = M⁻¹(c − ρ1)` and the normalization fixes
/// `ρ = (M⁻¹c)_o / (M⁻¹1)_o`. The pair `(V, ρ)` is refined jointly: each
/// sweep solves for the residual and moves along `M⁻¹1` to restore `V_o = 0`.
///
/// The discrete solution is unique once pinned, but on a truncated box with
/// reflecting faces it need not approximate the whole-space solution when `c`
/// grows in a direction the box cuts off. Choose the box so that the
/// stationary law has negligible mass near the faces.
pub fn solve_ergodic(model: &ControlModel, policy: &Policy, grid: &Grid) -> Result<SolveReport> {
    require_stationary(policy)?;
    let gen = discretize_generator(model, policy, grid)?;
    evaluate_ergodic(&gen, grid)
}

pub(crate) fn evaluate_ergodic(gen: &DiscreteGenerator, grid: &Grid) -> Result<SolveReport> {
    if grid.has_dirichlet() {
        return Err(Error::InvalidGrid("the ergodic solver needs Neumann faces only".into()));
    }
    let o = grid
        .origin_node()
        .ok_or_else(|| Error::InvalidGrid("the ergodic solver needs the origin as a grid node".into()))?;
    let mut m = shifted_system(gen, |_| 0.0);
    *m.diagonal_mut(o) += 1.0;
    let lu = BandedLu::factor(&m)?;
    let n = gen.cost.len();
    let mut z = vec![1.0; n];
    lu.solve_in_place(&mut z);
    if !(z[o].is_finite() && z[o] > 0.0) {
        return Err(Error::SolverDivergence("ergodic system is singular at the origin".into()));
    }
    let mut v = vec![0.0; n];
    let mut rho = 0.0;
    let mut r = vec![0.0; n];
    let mut sweeps = 0;
    let residual = loop {
        let shifted: Vec<f64> = gen.cost.iter().map(|c| c - rho).collect();
        m.residual(&v, &shifted, &mut r);
        let res = r.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if !res.is_finite() {
            return Err(Error::SolverDivergence("non-finite ergodic residual".into()));
        }
        let floor = 64.0 * f64::EPSILON * (m.abs_product_norm(&v) + rho.abs());
        if sweeps > 0 && (res <= RESIDUAL_TARGET || (sweeps >= 3 && res <= floor)) {
            break res;
        }
        if sweeps == 10 {
            return Err(Error::SolverDivergence(format!("ergodic residual {res:e} after {sweeps} sweeps")));
        }
        lu.solve_in_place(&mut r);
        let theta = (v[o] + r[o]) / z[o];
        for i in 0..n {
            v[i] += r[i] - theta * z[i];
        }
        v[o] = 0.0;
        rho += theta;
        sweeps += 1;
    };
    Ok(SolveReport {
        residual_inf_norm: residual,
        iterations: sweeps,
        field: DiscreteField::new(grid.clone(), v)?,
        scalar_out: Some(rho),
    })
}

/// `(α, α V_α(0))` for each rate; tends to the ergodic `ρ` as `α → 0`.
pub fn vanishing_discount(
    model: &ControlModel,
    policy: &Policy,
    grid: &Grid,
    alphas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    require_stationary(policy)?;
    let o = grid
        .origin_node()
        .ok_or_else(|| Error::InvalidGrid("vanishing discount needs the origin as a grid node".into()))?;
    let gen = discretize_generator(model, policy, grid)?;
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidModel(format!("alpha must be positive, got {alpha}")));
            }
            let r = evaluate_discounted(&gen, grid, alpha)?;
            Ok((alpha, alpha * r.field.values[o]))
        })
        .collect()
}
