use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::model::ActionBox;

use super::{
    build_action_grid, ActionGrid, CellPolicy, FiniteActionPolicy, Policy, ProbabilityVector, Selector, TimeCellPolicy,
};

/// Action grid on disk: either a lattice resolution `n` or explicit atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGridJson {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Vec<f64>>>,
}

impl ActionGridJson {
    pub fn from_grid(grid: &ActionGrid) -> Self {
        let b = grid.action_box();
        match grid.resolution() {
            Some(n) => ActionGridJson { low: b.low().to_vec(), high: b.high().to_vec(), n: Some(n), atoms: None },
            None => ActionGridJson {
                low: b.low().to_vec(),
                high: b.high().to_vec(),
                n: None,
                atoms: Some(grid.atoms().map(<[f64]>::to_vec).collect()),
            },
        }
    }

    pub fn build(&self) -> Result<ActionGrid> {
        let b = ActionBox::new(self.low.clone(), self.high.clone())?;
        match (self.n, &self.atoms) {
            (Some(n), None) if n >= 1 => Ok(build_action_grid(&b, n)),
            (None, Some(atoms)) => ActionGrid::from_atoms(b, atoms.clone()),
            _ => Err(Error::InvalidPolicy("action grid needs exactly one of `n` (>= 1) or `atoms`".into())),
        }
    }
}

/// Serialized policy, tagged by `"type"`.
///
/// Only tabulated policies serialize; callback-backed ones must first be
/// tabulated (for example by space quantization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyJson {
    Cell {
        id: String,
        action_grid: ActionGridJson,
        state_grid: GridSpec,
        /// One dense weight vector per cell.
        weights: Vec<Vec<f64>>,
    },
    FiniteAction {
        id: String,
        action_grid: ActionGridJson,
        state_grid: GridSpec,
        /// Atom index per state-grid node.
        atoms: Vec<usize>,
    },
    TimeCell {
        id: String,
        dt: f64,
        horizon: f64,
        slices: Vec<PolicyJson>,
    },
}

impl Policy {
    pub fn to_json(&self) -> Result<PolicyJson> {
        Ok(match self {
            Policy::Cell(p) => PolicyJson::Cell {
                id: p.id.clone(),
                action_grid: ActionGridJson::from_grid(&p.grid),
                state_grid: p.state_grid.spec().clone(),
                weights: (0..p.state_grid.cell_count()).map(|c| p.cell_measure(c).weights).collect(),
            },
            Policy::FiniteAction(p) => match &p.selector {
                Selector::Nodes { state_grid, indices } => PolicyJson::FiniteAction {
                    id: p.id.clone(),
                    action_grid: ActionGridJson::from_grid(&p.grid),
                    state_grid: state_grid.spec().clone(),
                    atoms: indices.to_vec(),
                },
                Selector::Fn { .. } => {
                    return Err(Error::InvalidPolicy(format!(
                        "policy `{}` is a callback and cannot be serialized",
                        p.id
                    )))
                }
            },
            Policy::TimeCell(p) => PolicyJson::TimeCell {
                id: p.id.clone(),
                dt: p.dt,
                horizon: p.horizon,
                slices: p.slices.iter().map(Policy::to_json).collect::<Result<_>>()?,
            },
            Policy::Kernel(p) => {
                return Err(Error::InvalidPolicy(format!("policy `{}` is a callback and cannot be serialized", p.id)))
            }
        })
    }
}

impl PolicyJson {
    pub fn into_policy(self) -> Result<Policy> {
        self.build(None)
    }

    /// Slices of a time-cell policy share one action grid instance.
    fn build(self, shared: Option<&Arc<ActionGrid>>) -> Result<Policy> {
        let grid_for = |g: &ActionGridJson| -> Result<Arc<ActionGrid>> {
            let built = g.build()?;
            Ok(match shared {
                Some(s) if **s == built => s.clone(),
                _ => Arc::new(built),
            })
        };
        Ok(match self {
            PolicyJson::Cell { id, action_grid, state_grid, weights } => {
                let grid = grid_for(&action_grid)?;
                let sg = Arc::new(Grid::new(state_grid)?);
                let cells = weights.into_iter().map(ProbabilityVector::new).collect::<Result<Vec<_>>>()?;
                Policy::Cell(CellPolicy::new(id, grid, sg, cells)?)
            }
            PolicyJson::FiniteAction { id, action_grid, state_grid, atoms } => {
                let grid = grid_for(&action_grid)?;
                let sg = Arc::new(Grid::new(state_grid)?);
                Policy::FiniteAction(FiniteActionPolicy::from_nodes(id, grid, sg, atoms)?)
            }
            PolicyJson::TimeCell { id, dt, horizon, slices } => {
                let mut built: Vec<Policy> = Vec::with_capacity(slices.len());
                for s in slices {
                    let first = built.first().map(|p: &Policy| p.action_grid().clone());
                    built.push(s.build(first.as_ref())?);
                }
                Policy::TimeCell(TimeCellPolicy::new(id, dt, horizon, built)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_every_tabulated_variant() {
        let b = ActionBox::new(vec![-1.0], vec![1.0]).unwrap();
        let g = Arc::new(build_action_grid(&b, 2));
        let sg = Arc::new(Grid::uniform(&[-1.0], &[1.0], &[4]).unwrap());
        let cells = vec![
            ProbabilityVector::dirac(5, 0),
            ProbabilityVector::new(vec![0.25, 0.0, 0.75, 0.0, 0.0]).unwrap(),
            ProbabilityVector::dirac(5, 4),
        ];
        let cell = Policy::Cell(CellPolicy::new("c", g.clone(), sg.clone(), cells).unwrap());
        let fa = Policy::FiniteAction(FiniteActionPolicy::from_nodes("f", g.clone(), sg, vec![0, 1, 3, 4]).unwrap());
        let tc = Policy::TimeCell(TimeCellPolicy::new("t", 0.5, 1.0, vec![cell.clone(), fa.clone()]).unwrap());
        for p in [cell, fa, tc] {
            let text = serde_json::to_string(&p.to_json().unwrap()).unwrap();
            let back: PolicyJson = serde_json::from_str(&text).unwrap();
            let q = back.into_policy().unwrap();
            assert_eq!(q.id(), p.id());
            for t in [0.0, 0.7] {
                for x in [-0.9, -0.2, 0.1, 0.95] {
                    assert_eq!(q.act(t, &[x]), p.act(t, &[x]));
                }
            }
        }
    }

    #[test]
    fn cell_schema_is_tagged() {
        let b = ActionBox::new(vec![0.0], vec![1.0]).unwrap();
        let g = Arc::new(ActionGrid::from_atoms(b, vec![vec![0.0], vec![1.0]]).unwrap());
        let sg = Arc::new(Grid::uniform(&[0.0], &[1.0], &[3]).unwrap());
        let p =
            CellPolicy::new("c", g, sg, vec![ProbabilityVector::dirac(2, 0), ProbabilityVector::dirac(2, 1)]).unwrap();
        let v = serde_json::to_value(Policy::Cell(p).to_json().unwrap()).unwrap();
        assert_eq!(v["type"], "cell");
        assert_eq!(v["weights"], serde_json::json!([[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(v["action_grid"]["atoms"], serde_json::json!([[0.0], [1.0]]));
    }

    #[test]
    fn callbacks_do_not_serialize() {
        let b = ActionBox::new(vec![0.0], vec![1.0]).unwrap();
        let g = Arc::new(build_action_grid(&b, 1));
        assert!(Policy::constant_atom(g, 0).to_json().is_err());
    }
}
