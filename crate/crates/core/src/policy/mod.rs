//! Relaxed Markov policies and their quantizations.
//!
//! A policy maps `(t, x)` to a finitely supported probability measure on the
//! action box. Four representations exist:
//!
//! * [`KernelPolicy`]: an arbitrary pure callback (analytic feedbacks, test kernels);
//! * [`FiniteActionPolicy`]: always a Dirac at one atom of an [`ActionGrid`];
//! * [`CellPolicy`]: one probability vector per cell of a state [`Grid`];
//! * [`TimeCellPolicy`]: one stationary policy per time interval `[kΔt, (k+1)Δt)`.

mod action_grid;
mod json;
mod quantize;
mod simplex;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Compiled};
use crate::grid::Grid;
use crate::model::{var_names, ActionBox};

pub use action_grid::{build_action_grid, ActionGrid};
pub use json::PolicyJson;
pub use quantize::{discretize_policy_time, quantize_policy_actions, quantize_policy_space};
pub use simplex::{nearest_simplex, total_variation, SimplexGrid};

/// Nonnegative weights over the atoms of an action grid summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidPolicy("weights must be finite and nonnegative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPolicy(format!("weights sum to {total}, not 1")));
        }
        Ok(ProbabilityVector { weights })
    }

    pub fn dirac(len: usize, at: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[at] = 1.0;
        ProbabilityVector { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    pub fn as_action(&self) -> Action<'static> {
        Action::Mixture(Cow::Owned(self.support().map(|i| (i, self.weights[i])).collect()))
    }
}

/// Kahan-compensated sum.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// The measure a policy puts on actions at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Action<'a> {
    /// Dirac at an atom of the policy's action grid.
    Atom(usize),
    /// Sparse `(atom index, weight)` pairs on the policy's action grid.
    Mixture(Cow<'a, [(usize, f64)]>),
    /// Dirac at an arbitrary point of the action box.
    Point(SmallVec<[f64; 4]>),
}

impl Action<'_> {
    /// Calls `f(ζ, w)` for every atom with nonzero weight.
    #[inline]
    pub fn for_each(&self, grid: &ActionGrid, mut f: impl FnMut(&[f64], f64)) {
        match self {
            Action::Atom(i) => f(grid.atom(*i), 1.0),
            Action::Point(p) => f(p, 1.0),
            Action::Mixture(pairs) => {
                for &(i, w) in pairs.iter() {
                    if w != 0.0 {
                        f(grid.atom(i), w)
                    }
                }
            }
        }
    }

    pub fn into_owned(self) -> Action<'static> {
        match self {
            Action::Atom(i) => Action::Atom(i),
            Action::Point(p) => Action::Point(p),
            Action::Mixture(c) => Action::Mixture(Cow::Owned(c.into_owned())),
        }
    }

    /// Dense weights over `grid`; points are pushed to their nearest atom.
    pub fn to_probability(&self, grid: &ActionGrid) -> ProbabilityVector {
        let mut w = vec![0.0; grid.len()];
        match self {
            Action::Atom(i) => w[*i] = 1.0,
            Action::Point(p) => w[grid.nearest_unchecked(p)] = 1.0,
            Action::Mixture(pairs) => {
                for &(i, x) in pairs.iter() {
                    w[i] += x;
                }
            }
        }
        ProbabilityVector { weights: w }
    }
}

pub type KernelFn = dyn Fn(f64, &[f64]) -> Action<'static> + Send + Sync;
pub type SelectorFn = dyn Fn(f64, &[f64]) -> usize + Send + Sync;

/// Policy given by an arbitrary pure callback.
#[derive(Clone)]
pub struct KernelPolicy {
    pub id: String,
    grid: Arc<ActionGrid>,
    kernel: Arc<KernelFn>,
    stationary: bool,
}

impl KernelPolicy {
    pub fn stationary(
        id: impl Into<String>,
        grid: Arc<ActionGrid>,
        f: impl Fn(&[f64]) -> Action<'static> + Send + Sync + 'static,
    ) -> Self {
        KernelPolicy { id: id.into(), grid, kernel: Arc::new(move |_t, x| f(x)), stationary: true }
    }

    pub fn markov(
        id: impl Into<String>,
        grid: Arc<ActionGrid>,
        f: impl Fn(f64, &[f64]) -> Action<'static> + Send + Sync + 'static,
    ) -> Self {
        KernelPolicy { id: id.into(), grid, kernel: Arc::new(f), stationary: false }
    }
}

#[derive(Clone)]
pub enum Selector {
    Fn {
        f: Arc<SelectorFn>,
        stationary: bool,
    },
    /// Atom index per state-grid node; queries use the nearest node.
    Nodes {
        state_grid: Arc<Grid>,
        indices: Arc<Vec<usize>>,
    },
}

/// Policy whose output is always a Dirac at one atom.
#[derive(Clone)]
pub struct FiniteActionPolicy {
    pub id: String,
    grid: Arc<ActionGrid>,
    selector: Selector,
}

impl FiniteActionPolicy {
    pub fn from_fn(
        id: impl Into<String>,
        grid: Arc<ActionGrid>,
        stationary: bool,
        f: impl Fn(f64, &[f64]) -> usize + Send + Sync + 'static,
    ) -> Self {
        FiniteActionPolicy { id: id.into(), grid, selector: Selector::Fn { f: Arc::new(f), stationary } }
    }

    pub fn from_nodes(
        id: impl Into<String>,
        grid: Arc<ActionGrid>,
        state_grid: Arc<Grid>,
        indices: Vec<usize>,
    ) -> Result<Self> {
        if indices.len() != state_grid.len() {
            return Err(Error::InvalidPolicy(format!(
                "{} node actions for {} grid nodes",
                indices.len(),
                state_grid.len()
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= grid.len()) {
            return Err(Error::InvalidPolicy(format!("atom index {bad} out of range")));
        }
        Ok(FiniteActionPolicy {
            id: id.into(),
            grid,
            selector: Selector::Nodes { state_grid, indices: Arc::new(indices) },
        })
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    #[inline]
    pub fn select(&self, t: f64, x: &[f64]) -> usize {
        match &self.selector {
            Selector::Fn { f, .. } => f(t, x),
            Selector::Nodes { state_grid, indices } => indices[state_grid.nearest_node(x)],
        }
    }
}

/// Piecewise constant in space: one measure per cell of a state grid.
#[derive(Clone)]
pub struct CellPolicy {
    pub id: String,
    grid: Arc<ActionGrid>,
    state_grid: Arc<Grid>,
    cells: Arc<Vec<Vec<(usize, f64)>>>,
}

impl CellPolicy {
    pub fn new(
        id: impl Into<String>,
        grid: Arc<ActionGrid>,
        state_grid: Arc<Grid>,
        cells: Vec<ProbabilityVector>,
    ) -> Result<Self> {
        if cells.len() != state_grid.cell_count() {
            return Err(Error::InvalidPolicy(format!(
                "{} cell measures for {} cells",
                cells.len(),
                state_grid.cell_count()
            )));
        }
        if cells.iter().any(|p| p.len() != grid.len()) {
            return Err(Error::InvalidPolicy("cell measure length differs from the action grid".into()));
        }
        let cells = cells.iter().map(|p| p.support().map(|i| (i, p.weights()[i])).collect()).collect();
        Ok(CellPolicy { id: id.into(), grid, state_grid, cells: Arc::new(cells) })
    }

    pub fn state_grid(&self) -> &Arc<Grid> {
        &self.state_grid
    }

    pub fn cell_measure(&self, cell: usize) -> ProbabilityVector {
        let mut w = vec![0.0; self.grid.len()];
        for &(i, x) in &self.cells[cell] {
            w[i] = x;
        }
        ProbabilityVector { weights: w }
    }

    /// Number of distinct measures used across cells.
    pub fn distinct_values(&self) -> usize {
        let mut seen: Vec<&Vec<(usize, f64)>> = Vec::new();
        for c in self.cells.iter() {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen.len()
    }
}

/// Piecewise constant in time: slice `k` acts on `[kΔt, (k+1)Δt)`, the last
/// slice also covers everything after it.
#[derive(Clone)]
pub struct TimeCellPolicy {
    pub id: String,
    dt: f64,
    horizon: f64,
    slices: Vec<Policy>,
}

impl TimeCellPolicy {
    pub fn new(id: impl Into<String>, dt: f64, horizon: f64, slices: Vec<Policy>) -> Result<Self> {
        if !(dt > 0.0) || slices.is_empty() {
            return Err(Error::InvalidPolicy("time-cell policy needs dt > 0 and at least one slice".into()));
        }
        if slices.iter().any(|s| !s.is_stationary()) {
            return Err(Error::InvalidPolicy("time slices must be stationary".into()));
        }
        let g = slices[0].action_grid();
        if slices.iter().any(|s| s.action_grid() != g) {
            return Err(Error::InvalidPolicy("time slices must share one action grid".into()));
        }
        Ok(TimeCellPolicy { id: id.into(), dt, horizon, slices })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn slices(&self) -> &[Policy] {
        &self.slices
    }

    #[inline]
    pub fn slice_index(&self, t: f64) -> usize {
        let k = (t / self.dt + 1e-9).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.slices.len() - 1)
        }
    }
}

#[derive(Clone)]
pub enum Policy {
    Kernel(KernelPolicy),
    FiniteAction(FiniteActionPolicy),
    Cell(CellPolicy),
    TimeCell(TimeCellPolicy),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self {
            Policy::Kernel(_) => "Kernel",
            Policy::FiniteAction(_) => "FiniteAction",
            Policy::Cell(_) => "Cell",
            Policy::TimeCell(_) => "TimeCell",
        };
        write!(f, "Policy::{kind}({})", self.id())
    }
}

impl Policy {
    pub fn id(&self) -> &str {
        match self {
            Policy::Kernel(p) => &p.id,
            Policy::FiniteAction(p) => &p.id,
            Policy::Cell(p) => &p.id,
            Policy::TimeCell(p) => &p.id,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        let id = id.into();
        match &mut self {
            Policy::Kernel(p) => p.id = id,
            Policy::FiniteAction(p) => p.id = id,
            Policy::Cell(p) => p.id = id,
            Policy::TimeCell(p) => p.id = id,
        }
        self
    }

    pub fn action_grid(&self) -> &Arc<ActionGrid> {
        match self {
            Policy::Kernel(p) => &p.grid,
            Policy::FiniteAction(p) => &p.grid,
            Policy::Cell(p) => &p.grid,
            Policy::TimeCell(p) => p.slices[0].action_grid(),
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            Policy::Kernel(p) => p.stationary,
            Policy::FiniteAction(p) => match &p.selector {
                Selector::Fn { stationary, .. } => *stationary,
                Selector::Nodes { .. } => true,
            },
            Policy::Cell(_) => true,
            Policy::TimeCell(p) => p.slices.len() == 1,
        }
    }

    /// The measure applied at time `t` in state `x`.
    #[inline]
    pub fn act(&self, t: f64, x: &[f64]) -> Action<'_> {
        match self {
            Policy::Kernel(p) => (p.kernel)(if p.stationary { 0.0 } else { t }, x),
            Policy::FiniteAction(p) => Action::Atom(p.select(t, x)),
            Policy::Cell(p) => Action::Mixture(Cow::Borrowed(&p.cells[p.state_grid.cell_index(x)])),
            Policy::TimeCell(p) => p.slices[p.slice_index(t)].act(t, x),
        }
    }

    /// Stationary policy `x ↦ v(t, x)` with `t` frozen.
    pub fn slice_at(&self, t: f64) -> Policy {
        if self.is_stationary() {
            return self.clone();
        }
        match self {
            Policy::TimeCell(p) => p.slices[p.slice_index(t)].clone(),
            Policy::Kernel(p) => {
                let kernel = p.kernel.clone();
                Policy::Kernel(KernelPolicy {
                    id: format!("{}@t={t}", p.id),
                    grid: p.grid.clone(),
                    kernel: Arc::new(move |_s, x| kernel(t, x)),
                    stationary: true,
                })
            }
            Policy::FiniteAction(p) => match &p.selector {
                Selector::Fn { f, .. } => {
                    let f = f.clone();
                    Policy::FiniteAction(FiniteActionPolicy {
                        id: format!("{}@t={t}", p.id),
                        grid: p.grid.clone(),
                        selector: Selector::Fn { f: Arc::new(move |_s, x| f(t, x)), stationary: true },
                    })
                }
                Selector::Nodes { .. } => self.clone(),
            },
            Policy::Cell(_) => self.clone(),
        }
    }

    /// Constant Dirac at one atom.
    pub fn constant_atom(grid: Arc<ActionGrid>, atom: usize) -> Policy {
        Policy::FiniteAction(FiniteActionPolicy::from_fn(format!("const[{atom}]"), grid, true, move |_, _| atom))
    }

    /// Constant measure.
    pub fn constant_measure(id: impl Into<String>, grid: Arc<ActionGrid>, nu: &ProbabilityVector) -> Policy {
        let pairs: Vec<(usize, f64)> = nu.support().map(|i| (i, nu.weights()[i])).collect();
        Policy::Kernel(KernelPolicy::stationary(id, grid, move |_| Action::Mixture(Cow::Owned(pairs.clone()))))
    }

    /// Point-valued feedback `u = clamp(e(x))` from one expression per action
    /// component, in the variables `x1..xd` and `t`.
    pub fn feedback(id: impl Into<String>, grid: Arc<ActionGrid>, dim_x: usize, exprs: &[String]) -> Result<Policy> {
        let bbox: ActionBox = grid.action_box().clone();
        if exprs.len() != bbox.dim() {
            return Err(Error::InvalidPolicy(format!("feedback needs {} components, got {}", bbox.dim(), exprs.len())));
        }
        let names = var_names(dim_x, 0);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let parsed =
            exprs.iter().map(|s| parse_expr(s, &names).map_err(|e| Error::parse(s, e))).collect::<Result<Vec<_>>>()?;
        let uses_t = parsed.iter().any(|e| e.slots().contains(&dim_x));
        let compiled: Vec<Compiled> = parsed.iter().map(|e| e.compile()).collect();
        // a component that hits a domain error falls back to the lower box edge
        let f = move |t: f64, x: &[f64]| {
            let mut vars: SmallVec<[f64; 8]> = x.iter().copied().collect();
            vars.push(t);
            let mut p: SmallVec<[f64; 4]> = compiled.iter().map(|c| c.eval(&vars).unwrap_or(f64::NAN)).collect();
            for (i, z) in p.iter_mut().enumerate() {
                *z = if z.is_nan() { bbox.low()[i] } else { z.clamp(bbox.low()[i], bbox.high()[i]) };
            }
            Action::Point(p)
        };
        Ok(Policy::Kernel(if uses_t {
            KernelPolicy::markov(id, grid, f)
        } else {
            KernelPolicy::stationary(id, grid, move |x| f(0.0, x))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Arc<ActionGrid> {
        let b = ActionBox::new(vec![-1.0], vec![1.0]).unwrap();
        Arc::new(build_action_grid(&b, 1))
    }

    #[test]
    fn probability_vectors_validate() {
        assert!(ProbabilityVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![1.5, -0.5]).is_err());
        let tenths = ProbabilityVector::new(vec![0.1; 10]).unwrap();
        assert_eq!(tenths.support().count(), 10);
    }

    #[test]
    fn stationary_policies_ignore_time() {
        let g = grid3();
        let p = Policy::feedback("fb", g.clone(), 1, &["-0.5*x1".into()]).unwrap();
        assert!(p.is_stationary());
        for x in [-3.0, 0.2, 1.7] {
            assert_eq!(p.act(0.0, &[x]), p.act(12.5, &[x]));
        }
        let c = Policy::constant_atom(g, 2);
        assert_eq!(c.act(0.0, &[1.0]), c.act(3.0, &[1.0]));
    }

    #[test]
    fn feedback_clamps_to_the_box() {
        let p = Policy::feedback("fb", grid3(), 1, &["3*x1".into()]).unwrap();
        assert_eq!(p.act(0.0, &[1.0]), Action::Point([1.0].into_iter().collect()));
        assert_eq!(p.act(0.0, &[-0.1]), Action::Point([-0.30000000000000004].into_iter().collect()));
        let m = Policy::feedback("fb", grid3(), 1, &["t - 1".into()]).unwrap();
        assert!(!m.is_stationary());
    }

    #[test]
    fn cell_policy_is_constant_per_cell() {
        let g = grid3();
        let sg = Arc::new(Grid::uniform(&[-1.0], &[1.0], &[5]).unwrap());
        let cells: Vec<ProbabilityVector> = (0..4).map(|c| ProbabilityVector::dirac(3, c % 3)).collect();
        let p = Policy::Cell(CellPolicy::new("cells", g, sg, cells).unwrap());
        assert_eq!(p.act(0.0, &[-0.9]), p.act(0.0, &[-0.6]));
        assert_ne!(p.act(0.0, &[-0.9]), p.act(0.0, &[-0.4]));
    }

    #[test]
    fn time_cell_lookup() {
        let g = grid3();
        let slices: Vec<Policy> = (0..3).map(|i| Policy::constant_atom(g.clone(), i)).collect();
        let p = TimeCellPolicy::new("tc", 0.3, 0.9, slices).unwrap();
        assert_eq!(p.slice_index(0.0), 0);
        assert_eq!(p.slice_index(0.29), 0);
        assert_eq!(p.slice_index(3.0 * 0.1), 1);
        assert_eq!(p.slice_index(0.6), 2);
        assert_eq!(p.slice_index(5.0), 2);
    }
}
