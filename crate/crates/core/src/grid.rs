//! Rectangular state-space grids, their cells, and fields stored on nodes.
//!
//! Nodes are numbered with axis 0 varying fastest. A grid with `p` points on
//! an axis has `p - 1` cells on that axis; cells are half-open except the
//! last one, so they partition the box exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Compiled, Expr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySpec {
    Neumann,
    Dirichlet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub points: Vec<usize>,
    /// One `[low face, high face]` pair per axis; Neumann everywhere when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<Vec<[BoundarySpec; 2]>>,
}

#[derive(Debug, Clone)]
pub enum Boundary {
    Neumann,
    Dirichlet { expr: Expr, compiled: Compiled },
}

impl Boundary {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, Boundary::Dirichlet { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    bc: Vec<[Boundary; 2]>,
}

pub(crate) fn state_var_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let d = spec.low.len();
        if d == 0 || spec.high.len() != d || spec.points.len() != d {
            return Err(Error::InvalidGrid("low/high/points must have the same nonzero length".into()));
        }
        let mut spacing = Vec::with_capacity(d);
        let mut strides = Vec::with_capacity(d);
        let mut len = 1usize;
        for a in 0..d {
            let (lo, hi, p) = (spec.low[a], spec.high[a], spec.points[a]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidGrid(format!("axis {a}: need finite low < high")));
            }
            if p < 3 {
                return Err(Error::InvalidGrid(format!("axis {a}: need at least 3 points, got {p}")));
            }
            spacing.push((hi - lo) / (p - 1) as f64);
            strides.push(len);
            len *= p;
        }
        let names = state_var_names(d);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let bc = match &spec.bc {
            None => (0..d).map(|_| [Boundary::Neumann, Boundary::Neumann]).collect(),
            Some(faces) => {
                if faces.len() != d {
                    return Err(Error::InvalidGrid("bc needs one [low, high] pair per axis".into()));
                }
                let mut out = Vec::with_capacity(d);
                for pair in faces {
                    let conv = |b: &BoundarySpec| -> Result<Boundary> {
                        Ok(match b {
                            BoundarySpec::Neumann => Boundary::Neumann,
                            BoundarySpec::Dirichlet(src) => {
                                let expr = parse_expr(src, &names).map_err(|e| Error::parse(src, e))?;
                                let compiled = expr.compile();
                                Boundary::Dirichlet { expr, compiled }
                            }
                        })
                    };
                    out.push([conv(&pair[0])?, conv(&pair[1])?]);
                }
                out
            }
        };
        Ok(Grid { spec, spacing, strides, len, bc })
    }

    /// Uniform grid with Neumann faces everywhere.
    pub fn uniform(low: &[f64], high: &[f64], points: &[usize]) -> Result<Self> {
        Grid::new(GridSpec { low: low.to_vec(), high: high.to_vec(), points: points.to_vec(), bc: None })
    }

    /// Same box and resolution with every face Dirichlet with the given value expression.
    pub fn with_dirichlet(&self, value_src: &str) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.bc = Some(
            (0..self.dim())
                .map(|_| {
                    [BoundarySpec::Dirichlet(value_src.to_string()), BoundarySpec::Dirichlet(value_src.to_string())]
                })
                .collect(),
        );
        Grid::new(spec)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.low.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn low(&self) -> &[f64] {
        &self.spec.low
    }

    pub fn high(&self) -> &[f64] {
        &self.spec.high
    }

    pub fn points(&self) -> &[usize] {
        &self.spec.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn boundary(&self, axis: usize, high_face: bool) -> &Boundary {
        &self.bc[axis][high_face as usize]
    }

    pub fn has_dirichlet(&self) -> bool {
        self.bc.iter().flatten().any(Boundary::is_dirichlet)
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.spec.points[axis] {
            self.spec.high[axis]
        } else {
            self.spec.low[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        self.spec
            .points
            .iter()
            .map(|&p| {
                let i = rem % p;
                rem /= p;
                i
            })
            .collect()
    }

    pub fn node_coords(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for (a, &p) in self.spec.points.iter().enumerate() {
            out[a] = self.axis_coord(a, rem % p);
            rem /= p;
        }
    }

    pub fn node(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords(node, &mut x);
        x
    }

    /// The Dirichlet face a node sits on, if any (first matching axis wins).
    pub fn dirichlet_face(&self, node: usize) -> Option<&Boundary> {
        let idx = self.multi_index(node);
        for (a, &i) in idx.iter().enumerate() {
            if i == 0 && self.bc[a][0].is_dirichlet() {
                return Some(&self.bc[a][0]);
            }
            if i + 1 == self.spec.points[a] && self.bc[a][1].is_dirichlet() {
                return Some(&self.bc[a][1]);
            }
        }
        None
    }

    /// Boundary value at a Dirichlet node.
    pub fn dirichlet_value(&self, node: usize) -> Result<Option<f64>> {
        match self.dirichlet_face(node) {
            Some(Boundary::Dirichlet { compiled, .. }) => Ok(Some(compiled.eval(&self.node(node))?)),
            _ => Ok(None),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, &v)| v >= self.spec.low[a] && v <= self.spec.high[a])
    }

    /// Node whose coordinates are the origin, if the grid has one.
    pub fn origin_node(&self) -> Option<usize> {
        let mut node = 0;
        for a in 0..self.dim() {
            let f = -self.spec.low[a] / self.spacing[a];
            let i = f.round();
            if (f - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.spec.points[a] {
                return None;
            }
            node += i as usize * self.strides[a];
        }
        Some(node)
    }

    /// Nearest node, coordinates clamped to the box; exact half-way ties go to the lower node.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for a in 0..self.dim() {
            let p = self.spec.points[a];
            let f = ((x[a] - self.spec.low[a]) / self.spacing[a]).clamp(0.0, (p - 1) as f64);
            let lo = f.floor();
            let i = if f - lo > 0.5 { lo as usize + 1 } else { lo as usize };
            node += i.min(p - 1) * self.strides[a];
        }
        node
    }

    pub fn cell_count(&self) -> usize {
        self.spec.points.iter().map(|p| p - 1).product()
    }

    /// Cell containing `x`; points outside the box use the nearest boundary cell.
    pub fn cell_index(&self, x: &[f64]) -> usize {
        let mut cell = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            let cells = self.spec.points[a] - 1;
            let f = (x[a] - self.spec.low[a]) / self.spacing[a];
            let i = if f <= 0.0 { 0 } else { (f.floor() as usize).min(cells - 1) };
            cell += i * stride;
            stride *= cells;
        }
        cell
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        let mut rem = cell;
        (0..self.dim())
            .map(|a| {
                let cells = self.spec.points[a] - 1;
                let i = rem % cells;
                rem /= cells;
                0.5 * (self.axis_coord(a, i) + self.axis_coord(a, i + 1))
            })
            .collect()
    }

    /// Tensor-product trapezoid weight of a node.
    pub fn trapezoid_weight(&self, node: usize) -> f64 {
        let idx = self.multi_index(node);
        idx.iter()
            .enumerate()
            .map(|(a, &i)| {
                let h = self.spacing[a];
                if i == 0 || i + 1 == self.spec.points[a] {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Grid keeping every other node, when every axis has an even number of cells.
    pub fn coarsened(&self) -> Option<Grid> {
        if self.spec.points.iter().any(|p| (p - 1) % 2 != 0 || (p - 1) / 2 < 2) {
            return None;
        }
        let mut spec = self.spec.clone();
        spec.points = spec.points.iter().map(|p| (p - 1) / 2 + 1).collect();
        Grid::new(spec).ok()
    }
}

/// One value per node of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

const FIELD_MAGIC: &[u8; 8] = b"DQFIELD\0";
const FIELD_VERSION: u32 = 1;

impl DiscreteField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("field has {} values for {} nodes", values.len(), grid.len())));
        }
        Ok(DiscreteField { grid, values })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation, with `x` clamped to the box.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let d = self.grid.dim();
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let p = self.grid.points()[a];
            let f = ((x[a] - self.grid.low()[a]) / self.grid.spacing()[a]).clamp(0.0, (p - 1) as f64);
            let i = (f.floor() as usize).min(p - 2);
            frac[a] = f - i as f64;
            base += i * self.grid.strides()[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = base;
            for (a, fa) in frac.iter().enumerate() {
                if corner >> a & 1 == 1 {
                    w *= fa;
                    node += self.grid.strides()[a];
                } else {
                    w *= 1.0 - fa;
                }
            }
            if w != 0.0 {
                acc += w * self.values[node];
            }
        }
        acc
    }

    /// CSV with header `x1,..,xd,value`, nodes in storage order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim();
        let header: Vec<String> = state_var_names(d).into_iter().chain(["value".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut x = vec![0.0; d];
        for (node, v) in self.values.iter().enumerate() {
            self.grid.node_coords(node, &mut x);
            let mut line: Vec<String> = x.iter().map(|c| format_f64(*c)).collect();
            line.push(format_f64(*v));
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary layout (little endian): magic `DQFIELD\0`, u32 version, u32 dims,
    /// per axis (u64 points, f64 low, f64 high), u64 value count, f64 values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        for a in 0..self.grid.dim() {
            w.write_all(&(self.grid.points()[a] as u64).to_le_bytes())?;
            w.write_all(&self.grid.low()[a].to_le_bytes())?;
            w.write_all(&self.grid.high()[a].to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout back; boundary tags are not stored and come back Neumann.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::InvalidGrid("bad field magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FIELD_VERSION {
            return Err(Error::InvalidGrid(format!("unsupported field version {version}")));
        }
        let dims = read_u32(&mut r)? as usize;
        let (mut low, mut high, mut points) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..dims {
            points.push(read_u64(&mut r)? as usize);
            low.push(read_f64(&mut r)?);
            high.push(read_f64(&mut r)?);
        }
        let grid = Grid::uniform(&low, &high, &points)?;
        let n = read_u64(&mut r)? as usize;
        let values = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        DiscreteField::new(grid, values)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// 17 significant digits, '.' decimal separator.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::uniform(&[0.0], &[1.0], &[2]).is_err());
        assert!(Grid::uniform(&[1.0], &[0.0], &[5]).is_err());
        assert!(Grid::uniform(&[0.0, 0.0], &[1.0], &[5]).is_err());
    }

    #[test]
    fn cells_partition_the_box() {
        let g = Grid::uniform(&[0.0], &[1.0], &[5]).unwrap();
        assert_eq!(g.cell_count(), 4);
        let centers: Vec<f64> = (0..4).map(|c| g.cell_center(c)[0]).collect();
        assert_eq!(centers, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.cell_index(&[0.25]), 1);
        assert_eq!(g.cell_index(&[1.0]), 3);
        assert_eq!(g.cell_index(&[-3.0]), 0);
        assert_eq!(g.cell_index(&[0.2]), 0);
    }

    #[test]
    fn node_numbering_axis0_fastest() {
        let g = Grid::uniform(&[0.0, 10.0], &[2.0, 12.0], &[3, 3]).unwrap();
        assert_eq!(g.node(1), vec![1.0, 10.0]);
        assert_eq!(g.node(3), vec![0.0, 11.0]);
        assert_eq!(g.nearest_node(&[1.6, 11.4]), 2 + 3);
        assert_eq!(g.nearest_node(&[0.5, 10.0]), 0);
    }

    #[test]
    fn origin_lookup() {
        let g = Grid::uniform(&[-6.0], &[6.0], &[1201]).unwrap();
        assert_eq!(g.origin_node(), Some(600));
        let g = Grid::uniform(&[-1.0], &[2.0], &[5]).unwrap();
        assert_eq!(g.origin_node(), None);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = Grid::uniform(&[0.0, 0.0], &[1.0, 2.0], &[5, 9]).unwrap();
        let vals: Vec<f64> = (0..g.len())
            .map(|n| {
                let x = g.node(n);
                1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]
            })
            .collect();
        let f = DiscreteField::new(g, vals).unwrap();
        let v = f.value_at(&[0.33, 1.71]);
        assert!((v - (1.0 + 0.66 - 1.71 + 0.5 * 0.33 * 1.71)).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid::uniform(&[-1.0, 0.0], &[1.0, 3.0], &[3, 4]).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64 * 0.1 - 0.3).collect();
        let f = DiscreteField::new(g, vals).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"DQFIELD\0");
        assert_eq!(buf.len(), 8 + 4 + 4 + 2 * 24 + 8 + 12 * 8);
        let back = DiscreteField::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.grid.spec(), f.grid.spec());
    }

    #[test]
    fn csv_layout() {
        let g = Grid::uniform(&[0.0], &[1.0], &[3]).unwrap();
        let f = DiscreteField::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,value");
        assert_eq!(lines[2], "5.0000000000000000e-1,2.0000000000000000e0");
    }

    #[test]
    fn trapezoid_weights_integrate_constants() {
        let g = Grid::uniform(&[-1.0, 0.0], &[1.0, 0.5], &[11, 7]).unwrap();
        let total: f64 = (0..g.len()).map(|n| g.trapezoid_weight(n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_faces() {
        let g = Grid::uniform(&[-1.0], &[1.0], &[5]).unwrap().with_dirichlet("x1^2 + 2").unwrap();
        assert_eq!(g.dirichlet_value(0).unwrap(), Some(3.0));
        assert_eq!(g.dirichlet_value(2).unwrap(), None);
        assert!(g.has_dirichlet());
    }
}
