//! Monotone finite-difference discretization of `ℒ_ζ f = trace(a ∇²f) + b·∇f`.
//!
//! Second derivatives use central differences. Mixed derivatives use the
//! seven-point stencil that leans along the diagonal matching the sign of
//! `a_kl`, which keeps off-diagonal weights nonnegative whenever
//! `a_kk / h_k² ≥ Σ_{l≠k} |a_kl| / (h_k h_l)`. Drift terms are upwinded
//! component by component. On Neumann faces the ghost node mirrors the
//! interior neighbour and a drift component pointing out of the box is
//! dropped, so the chain stays on the grid; nodes on Dirichlet faces get
//! identity rows.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ControlModel;
use crate::policy::{Action, ActionGrid, Policy};

use super::linalg::{CsrBuilder, CsrMatrix};

/// Grid geometry plus the diffusion matrix at every node.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: Grid,
    dim: usize,
    coords: Vec<f64>,
    diffusion: Vec<f64>,
    boundary: Vec<Option<f64>>,
}

impl Discretization {
    /// Checks `a(x)` positive definite and the stencil monotone at every node.
    pub fn new(model: &ControlModel, grid: &Grid) -> Result<Self> {
        let d = grid.dim();
        if d != model.dim_x() {
            return Err(Error::InvalidGrid(format!(
                "grid has dimension {d}, model has state dimension {}",
                model.dim_x()
            )));
        }
        let n = grid.len();
        let h = grid.spacing();
        let mut coords = vec![0.0; n * d];
        let mut diffusion = Vec::with_capacity(n * d * d);
        let mut boundary = Vec::with_capacity(n);
        for node in 0..n {
            let x = &mut coords[node * d..(node + 1) * d];
            grid.node_coords(node, x);
            let a = model.eval_diffusion_matrix(x)?;
            for k in 0..d {
                let mut cross = 0.0;
                for l in 0..d {
                    if l != k {
                        cross += a[k * d + l].abs() / (h[k] * h[l]);
                    }
                }
                let own = a[k * d + k] / (h[k] * h[k]);
                if own - cross < -1e-12 * own {
                    return Err(Error::MonotonicityViolation {
                        node,
                        detail: format!(
                            "axis {k}: a_kk/h_k^2 = {own:e} is below the mixed-term weight {cross:e} at x = {x:?}"
                        ),
                    });
                }
            }
            diffusion.extend_from_slice(&a);
            boundary.push(grid.dirichlet_value(node)?);
        }
        Ok(Discretization { grid: grid.clone(), dim: d, coords, diffusion, boundary })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn coords(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// Boundary value when the node sits on a Dirichlet face.
    pub fn boundary_value(&self, node: usize) -> Option<f64> {
        self.boundary[node]
    }

    #[inline]
    fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.grid.strides()[axis]) % self.grid.points()[axis]
    }

    /// Neighbour one step along `axis`, mirrored back inside at the box edge.
    #[inline]
    fn step(&self, node: usize, axis: usize, up: bool) -> usize {
        let s = self.grid.strides()[axis];
        let i = self.axis_index(node, axis);
        let inside = if up { i + 1 < self.grid.points()[axis] } else { i > 0 };
        if up == inside {
            node + s
        } else {
            node - s
        }
    }

    /// Upwind neighbour and weight `|b|/h` for one drift component, or
    /// `None` when the component is zero or points out of the box (only
    /// reachable on Neumann faces; Dirichlet nodes have identity rows).
    #[inline]
    fn upwind(&self, node: usize, axis: usize, b: f64) -> Option<(usize, f64)> {
        if b == 0.0 {
            return None;
        }
        let i = self.axis_index(node, axis);
        let h = self.grid.spacing()[axis];
        let s = self.grid.strides()[axis];
        if b > 0.0 {
            if i + 1 == self.grid.points()[axis] {
                return None;
            }
            Some((node + s, b / h))
        } else {
            if i == 0 {
                return None;
            }
            Some((node - s, -b / h))
        }
    }

    /// `b·∇_h V` at a node with the same upwinding as the assembled matrix.
    #[inline]
    pub fn drift_term(&self, node: usize, b: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (axis, &bk) in b.iter().enumerate() {
            if let Some((nb, w)) = self.upwind(node, axis, bk) {
                acc += w * (v[nb] - v[node]);
            }
        }
        acc
    }

    /// The generator `L` for a drift field (`n × d`, row per node).
    /// Rows of Dirichlet nodes are left zero.
    pub fn assemble(&self, drift: &[f64]) -> CsrMatrix {
        let (n, d) = (self.len(), self.dim);
        let h = self.grid.spacing();
        let per_row = 1 + 2 * d + 2 * d * d.saturating_sub(1) + d;
        let mut b = CsrBuilder::new(n, n * per_row);
        for node in 0..n {
            if self.boundary[node].is_some() {
                b.finish_row();
                continue;
            }
            let a = &self.diffusion[node * d * d..(node + 1) * d * d];
            let mut center = 0.0;
            for k in 0..d {
                let c = a[k * d + k] / (h[k] * h[k]);
                b.add(self.step(node, k, true), c);
                b.add(self.step(node, k, false), c);
                center -= 2.0 * c;
                for l in k + 1..d {
                    let akl = a[k * d + l];
                    if akl == 0.0 {
                        continue;
                    }
                    let w = akl.abs() / (h[k] * h[l]);
                    let same = akl > 0.0;
                    let kp = self.step(node, k, true);
                    let km = self.step(node, k, false);
                    b.add(self.step(kp, l, same), w);
                    b.add(self.step(km, l, !same), w);
                    b.add(kp, -w);
                    b.add(km, -w);
                    b.add(self.step(node, l, true), -w);
                    b.add(self.step(node, l, false), -w);
                    center += 2.0 * w;
                }
            }
            for k in 0..d {
                if let Some((nb, w)) = self.upwind(node, k, drift[node * d + k]) {
                    b.add(nb, w);
                    center -= w;
                }
            }
            b.add(node, center);
            b.finish_row();
        }
        b.build()
    }
}

/// Drift, cost and exit discount of an action choice at every node.
#[derive(Debug, Clone)]
pub struct NodeCoefficients {
    pub drift: Vec<f64>,
    pub cost: Vec<f64>,
    pub discount: Vec<f64>,
}

impl NodeCoefficients {
    fn evaluate<'p>(
        model: &ControlModel,
        disc: &Discretization,
        grid: &ActionGrid,
        t: f64,
        mut action: impl FnMut(usize, &[f64]) -> Action<'p>,
    ) -> Result<Self> {
        let (n, d) = (disc.len(), disc.dim);
        let mut out = NodeCoefficients { drift: vec![0.0; n * d], cost: vec![0.0; n], discount: vec![0.0; n] };
        let mut vars = model.scratch();
        let want_disc = model.exit().is_some();
        for node in 0..n {
            let x = disc.coords(node);
            let act = action(node, x);
            model.load_state(&mut vars, x, t);
            let (c, delta) =
                model.relaxed_at(&mut vars, grid, &act, &mut out.drift[node * d..(node + 1) * d], true, want_disc)?;
            out.cost[node] = c;
            out.discount[node] = delta;
        }
        Ok(out)
    }

    /// Coefficients under a policy at time `t`.
    pub fn for_policy(model: &ControlModel, disc: &Discretization, policy: &Policy, t: f64) -> Result<Self> {
        Self::evaluate(model, disc, policy.action_grid(), t, |_, x| policy.act(t, x))
    }

    /// Coefficients of a Dirac choice of atom per node.
    pub fn for_atoms(
        model: &ControlModel,
        disc: &Discretization,
        grid: &ActionGrid,
        atoms: &[usize],
        t: f64,
    ) -> Result<Self> {
        Self::evaluate(model, disc, grid, t, |node, _| Action::Atom(atoms[node]))
    }
}

/// Sparse generator matrix of a policy with its node-wise cost and exit discount.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    /// `L`, zero rows at Dirichlet nodes.
    pub matrix: CsrMatrix,
    pub cost: Vec<f64>,
    pub discount: Vec<f64>,
    /// Boundary value per node, `Some` exactly at Dirichlet nodes.
    pub boundary: Vec<Option<f64>>,
}

/// Generator of a stationary policy on a grid.
pub fn discretize_generator(model: &ControlModel, policy: &Policy, grid: &Grid) -> Result<DiscreteGenerator> {
    discretize_generator_at(model, policy, grid, 0.0)
}

/// Generator of a policy frozen at time `t`.
pub fn discretize_generator_at(
    model: &ControlModel,
    policy: &Policy,
    grid: &Grid,
    t: f64,
) -> Result<DiscreteGenerator> {
    let disc = Discretization::new(model, grid)?;
    let coeffs = NodeCoefficients::for_policy(model, &disc, policy, t)?;
    Ok(DiscreteGenerator {
        matrix: disc.assemble(&coeffs.drift),
        cost: coeffs.cost,
        discount: coeffs.discount,
        boundary: disc.boundary.clone(),
    })
}
