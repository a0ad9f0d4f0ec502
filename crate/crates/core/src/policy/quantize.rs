//! The three constructive approximations: finite actions, piecewise constant
//! in space, piecewise constant in time.

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::{
    Action, ActionGrid, CellPolicy, FiniteActionPolicy, KernelPolicy, Policy, Selector, SimplexGrid, TimeCellPolicy,
};

/// Pushes an action measure forward under `map` (source atom -> target atom),
/// merging mass that lands on the same target atom.
fn push_forward(action: Action<'_>, map: &[usize], target: &ActionGrid) -> Action<'static> {
    match action {
        Action::Atom(i) => Action::Atom(map[i]),
        Action::Point(p) => Action::Atom(target.nearest_unchecked(&p)),
        Action::Mixture(pairs) => {
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
            for &(i, w) in pairs.iter() {
                let j = map[i];
                match out.binary_search_by_key(&j, |e| e.0) {
                    Ok(pos) => out[pos].1 += w,
                    Err(pos) => out.insert(pos, (j, w)),
                }
            }
            Action::Mixture(Cow::Owned(out))
        }
    }
}

/// `v_n = Q_n v`: each output measure pushed forward under the nearest-atom
/// quantizer onto `grid`, so atom `i` receives the mass `v` puts in its cell.
pub fn quantize_policy_actions(v: &Policy, grid: Arc<ActionGrid>) -> Result<Policy> {
    let source = v.action_grid();
    if source.dim() != grid.dim() {
        return Err(Error::InvalidPolicy("action grids have different dimensions".into()));
    }
    let map: Vec<usize> = source.atoms().map(|a| grid.nearest_unchecked(a)).collect();
    let id = format!("{}|Q{}", v.id(), grid.resolution().map(|n| n.to_string()).unwrap_or_else(|| "*".into()));
    Ok(match v {
        Policy::Kernel(p) => {
            let inner = v.clone();
            let target = grid.clone();
            let stationary = p.stationary;
            let f = move |t: f64, x: &[f64]| push_forward(inner.act(t, x), &map, &target);
            Policy::Kernel(if stationary {
                KernelPolicy::stationary(id, grid, move |x| f(0.0, x))
            } else {
                KernelPolicy::markov(id, grid, f)
            })
        }
        Policy::FiniteAction(p) => match p.selector() {
            Selector::Fn { f, stationary } => {
                let f = f.clone();
                Policy::FiniteAction(FiniteActionPolicy::from_fn(id, grid, *stationary, move |t, x| map[f(t, x)]))
            }
            Selector::Nodes { state_grid, indices } => Policy::FiniteAction(FiniteActionPolicy::from_nodes(
                id,
                grid,
                state_grid.clone(),
                indices.iter().map(|&i| map[i]).collect(),
            )?),
        },
        Policy::Cell(p) => {
            let cells = (0..p.state_grid().cell_count())
                .map(|c| push_forward(p.cell_measure(c).as_action(), &map, &grid).to_probability(&grid))
                .collect();
            Policy::Cell(CellPolicy::new(id, grid, p.state_grid().clone(), cells)?)
        }
        Policy::TimeCell(p) => {
            let slices =
                p.slices().iter().map(|s| quantize_policy_actions(s, grid.clone())).collect::<Result<Vec<_>>>()?;
            Policy::TimeCell(TimeCellPolicy::new(id, p.dt(), p.horizon(), slices)?)
        }
    })
}

/// Piecewise constant in space: `v` sampled at each cell center of
/// `state_grid`, then (when `simplex` is given) snapped to the nearest
/// codebook element in total variation.
pub fn quantize_policy_space(v: &Policy, state_grid: Arc<Grid>, simplex: Option<&SimplexGrid>) -> Result<CellPolicy> {
    if !v.is_stationary() {
        return Err(Error::InvalidPolicy("space quantization needs a stationary policy".into()));
    }
    let grid = v.action_grid().clone();
    if let Some(s) = simplex {
        if s.atoms() != grid.len() {
            return Err(Error::InvalidPolicy(format!(
                "simplex grid has {} atoms, policy action grid has {}",
                s.atoms(),
                grid.len()
            )));
        }
    }
    let mut cells = Vec::with_capacity(state_grid.cell_count());
    for c in 0..state_grid.cell_count() {
        let center = state_grid.cell_center(c);
        let nu = v.act(0.0, &center).to_probability(&grid);
        cells.push(match simplex {
            Some(s) => s.project(&nu),
            None => nu,
        });
    }
    let id = match simplex {
        Some(s) => format!("{}|cells{}|m{}", v.id(), state_grid.cell_count(), s.resolution()),
        None => format!("{}|cells{}", v.id(), state_grid.cell_count()),
    };
    CellPolicy::new(id, grid, state_grid, cells)
}

/// Piecewise constant in time: interval `k` uses the stationary slice
/// `x ↦ v(kΔt, x)`; when `Δt` does not divide `T` the last interval is shorter.
pub fn discretize_policy_time(v: &Policy, dt: f64, horizon: f64) -> Result<TimeCellPolicy> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidPolicy("time discretization needs dt > 0 and T >= 0".into()));
    }
    let intervals = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let slices = (0..intervals).map(|k| v.slice_at(k as f64 * dt)).collect();
    TimeCellPolicy::new(format!("{}|dt{dt}", v.id()), dt, horizon, slices)
}
