use crate::error::{Error, Result};
use crate::model::ActionBox;

/// Finite set of actions `ζ_1..ζ_k` in the action box, with a nearest-neighbor
/// quantizer onto it.
///
/// Lattice grids (from [`build_action_grid`]) answer nearest-neighbor queries
/// axis by axis; grids built from explicit atoms fall back to a linear scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    bbox: ActionBox,
    dim: usize,
    atoms: Vec<f64>,
    lattice: Option<Lattice>,
    resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Lattice {
    coords: Vec<Vec<f64>>,
    strides: Vec<usize>,
}

/// Uniform lattice over `bbox` whose covering radius is below `1/n`.
///
/// Each axis of length `L` gets `ceil(n L)` intervals (spacing ≤ 1/n) when the
/// action dimension is at most 3; higher dimensions refine further so the
/// half-diagonal of a lattice cell stays below `1/n`. Atoms are ordered
/// lexicographically with the first axis most significant.
pub fn build_action_grid(bbox: &ActionBox, n: usize) -> ActionGrid {
    assert!(n >= 1, "action grid resolution must be positive");
    let k = bbox.dim();
    let mut coords = Vec::with_capacity(k);
    for a in 0..k {
        let (lo, hi) = (bbox.low()[a], bbox.high()[a]);
        let len = hi - lo;
        let intervals = if k <= 3 {
            ((n as f64 * len) - 1e-9).ceil().max(1.0) as usize
        } else {
            (n as f64 * len * (k as f64).sqrt() / 2.0).floor() as usize + 1
        };
        let axis: Vec<f64> =
            (0..=intervals).map(|i| if i == intervals { hi } else { lo + len * i as f64 / intervals as f64 }).collect();
        coords.push(axis);
    }
    let mut strides = vec![1usize; k];
    for a in (0..k.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * coords[a + 1].len();
    }
    let count: usize = coords.iter().map(Vec::len).product();
    let mut atoms = Vec::with_capacity(count * k);
    for idx in 0..count {
        for a in 0..k {
            atoms.push(coords[a][(idx / strides[a]) % coords[a].len()]);
        }
    }
    ActionGrid { bbox: bbox.clone(), dim: k, atoms, lattice: Some(Lattice { coords, strides }), resolution: Some(n) }
}

impl ActionGrid {
    /// Grid from explicit atoms; they must lie in the box and be pairwise distinct.
    pub fn from_atoms(bbox: ActionBox, atoms: Vec<Vec<f64>>) -> Result<Self> {
        let k = bbox.dim();
        if atoms.is_empty() {
            return Err(Error::InvalidPolicy("action grid needs at least one atom".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != k || !bbox.contains(a) {
                return Err(Error::OutOfBox(a.clone()));
            }
            if atoms[..i].contains(a) {
                return Err(Error::InvalidPolicy(format!("duplicate atom {a:?}")));
            }
        }
        Ok(ActionGrid { bbox, dim: k, atoms: atoms.concat(), lattice: None, resolution: None })
    }

    pub fn action_box(&self) -> &ActionBox {
        &self.bbox
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn resolution(&self) -> Option<usize> {
        self.resolution
    }

    #[inline]
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    /// Largest per-axis lattice spacing (None for explicit-atom grids).
    pub fn spacing(&self) -> Option<f64> {
        self.lattice
            .as_ref()
            .map(|l| l.coords.iter().map(|c| c.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)).fold(0.0, f64::max))
    }

    /// Index of the closest atom; ties go to the lowest index.
    pub fn nearest_action(&self, zeta: &[f64]) -> Result<usize> {
        if !self.bbox.contains(zeta) {
            return Err(Error::OutOfBox(zeta.to_vec()));
        }
        Ok(self.nearest_unchecked(zeta))
    }

    /// Nearest atom without the box check (points outside snap to the boundary atoms).
    pub fn nearest_unchecked(&self, zeta: &[f64]) -> usize {
        match &self.lattice {
            Some(l) => {
                let mut idx = 0;
                for (a, axis) in l.coords.iter().enumerate() {
                    idx += nearest_on_axis(axis, zeta[a]) * l.strides[a];
                }
                idx
            }
            None => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, atom) in self.atoms().enumerate() {
                    let d: f64 = atom.iter().zip(zeta).map(|(p, q)| (p - q) * (p - q)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            }
        }
    }
}

/// Nearest coordinate on a sorted uniform axis; exact ties resolve to the lower index.
fn nearest_on_axis(axis: &[f64], z: f64) -> usize {
    let n = axis.len();
    if n == 1 {
        return 0;
    }
    let lo = axis[0];
    let h = (axis[n - 1] - lo) / (n - 1) as f64;
    let guess = (((z - lo) / h).floor().max(0.0) as usize).min(n - 1);
    let from = guess.saturating_sub(1);
    let to = (guess + 2).min(n - 1);
    let mut best = from;
    let mut best_d = (axis[from] - z).abs();
    for (i, c) in axis.iter().enumerate().take(to + 1).skip(from + 1) {
        let d = (c - z).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(k: usize) -> ActionBox {
        ActionBox::new(vec![0.0; k], vec![1.0; k]).unwrap()
    }

    #[test]
    fn lattice_examples() {
        let g = build_action_grid(&unit_box(1), 2);
        assert_eq!(g.atoms().map(|a| a[0]).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        let b = ActionBox::new(vec![-1.0], vec![1.0]).unwrap();
        let g = build_action_grid(&b, 1);
        assert_eq!(g.atoms().map(|a| a[0]).collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        let g = build_action_grid(&unit_box(2), 2);
        assert_eq!(g.len(), 9);
        assert_eq!(g.atom(1), &[0.0, 0.5]);
        assert_eq!(g.atom(3), &[0.5, 0.0]);
    }

    #[test]
    fn nearest_examples() {
        let b = ActionBox::new(vec![-1.0], vec![1.0]).unwrap();
        let g = build_action_grid(&b, 1);
        assert_eq!(g.nearest_action(&[0.4]).unwrap(), 1);
        assert_eq!(g.nearest_action(&[0.5]).unwrap(), 1);
        assert_eq!(g.nearest_action(&[-1.0]).unwrap(), 0);
        assert!(matches!(g.nearest_action(&[1.5]), Err(Error::OutOfBox(_))));
        let explicit = ActionGrid::from_atoms(b, vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(explicit.nearest_action(&[0.5]).unwrap(), 1);
        assert_eq!(explicit.nearest_action(&[-0.5]).unwrap(), 0);
    }

    #[test]
    fn lattice_and_scan_agree() {
        let b = ActionBox::new(vec![-4.0, 0.0], vec![4.0, 1.0]).unwrap();
        let g = build_action_grid(&b, 3);
        let scan = ActionGrid::from_atoms(b.clone(), g.atoms().map(<[f64]>::to_vec).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let z = [rng.random_range(-4.0..4.0), rng.random_range(0.0..1.0)];
            assert_eq!(g.nearest_action(&z).unwrap(), scan.nearest_action(&z).unwrap());
        }
        // lattice ties at midpoints
        for i in 0..g.len() {
            let z = g.atom(i).to_vec();
            assert_eq!(g.nearest_action(&z).unwrap(), i);
        }
    }

    #[test]
    fn covering_and_cell_diameter_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, n) in [(1, 1), (1, 7), (2, 3), (3, 2), (4, 2)] {
            let b = ActionBox::new(vec![-1.0; k], vec![1.5; k]).unwrap();
            let g = build_action_grid(&b, n);
            let mut far: Vec<f64> = vec![0.0; g.len()];
            let mut worst: f64 = 0.0;
            let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); g.len()];
            for _ in 0..10_000 {
                let z: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.5)).collect();
                let i = g.nearest_action(&z).unwrap();
                let d = dist(&z, g.atom(i));
                worst = worst.max(d);
                far[i] = far[i].max(d);
                if members[i].len() < 64 {
                    members[i].push(z);
                }
            }
            assert!(worst < 1.0 / n as f64, "k={k} n={n}: covering radius {worst}");
            for m in &members {
                for p in m {
                    for q in m {
                        assert!(dist(p, q) < 2.0 / n as f64);
                    }
                }
            }
        }
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    }
}
