//! Compressed sparse rows and a banded LU factorization for the monotone
//! systems produced by the finite-difference generator.

use crate::error::{Error, Result};

/// Square sparse matrix in CSR form with every diagonal entry stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<usize>,
}

/// Row-by-row builder; duplicate columns within a row are summed.
pub struct CsrBuilder {
    m: CsrMatrix,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize, nnz_hint: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        CsrBuilder {
            m: CsrMatrix {
                n,
                row_ptr,
                cols: Vec::with_capacity(nnz_hint),
                vals: Vec::with_capacity(nnz_hint),
                diag: Vec::with_capacity(n),
            },
            row: Vec::with_capacity(16),
        }
    }

    pub fn add(&mut self, col: usize, val: f64) {
        self.row.push((col, val));
    }

    pub fn finish_row(&mut self) {
        let i = self.m.row_ptr.len() - 1;
        self.row.push((i, 0.0));
        self.row.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.row {
            if c == last {
                *self.m.vals.last_mut().unwrap() += v;
            } else {
                if c == i {
                    self.m.diag.push(self.m.cols.len());
                }
                self.m.cols.push(c);
                self.m.vals.push(v);
                last = c;
            }
        }
        self.row.clear();
        self.m.row_ptr.push(self.m.cols.len());
    }

    pub fn build(self) -> CsrMatrix {
        assert_eq!(self.m.row_ptr.len(), self.m.n + 1, "not every row was finished");
        self.m
    }
}

impl CsrMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.vals[self.diag[i]]
    }

    pub fn diagonal_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.vals[self.diag[i]]
    }

    /// Applies `f(i, j, v)` to every stored entry.
    pub fn map_entries(&mut self, mut f: impl FnMut(usize, usize, f64) -> f64) {
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                self.vals[k] = f(i, self.cols[k], self.vals[k]);
            }
        }
    }

    /// Replaces row `i` by the identity row, keeping the sparsity pattern.
    pub fn set_identity_row(&mut self, i: usize) {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            self.vals[k] = if self.cols[k] == i { 1.0 } else { 0.0 };
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `(lower, upper)` bandwidths over the stored nonzeros.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v != 0.0 {
                    if j < i {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
            }
        }
        (kl, ku)
    }

    /// `b − Ax` with each row accumulated in double-double precision, so the
    /// result is accurate even when it is far below `ε ‖A‖ ‖x‖`.
    pub fn residual(&self, x: &[f64], b: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (mut hi, mut lo) = (b[i], 0.0);
            for (j, v) in self.row(i) {
                let p = -v * x[j];
                let e = (-v).mul_add(x[j], -p);
                let s = hi + p;
                let bb = s - hi;
                lo += (hi - (s - bb)) + (p - bb) + e;
                hi = s;
            }
            *o = hi + lo;
        }
    }

    /// `max_i Σ_j |a_ij| |x_j|`, the scale of rounding noise in a residual.
    pub fn abs_product_norm(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| (v * x[j]).abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// LU factors of a banded matrix, without pivoting.
///
/// Every system assembled here is a nonsingular M-matrix, whose leading
/// principal minors are all positive, so elimination in natural order is
/// stable and needs no row exchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.len();
        let (kl, ku) = a.bandwidths();
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[i * width + j + kl - i] += v;
            }
        }
        for k in 0..n {
            let pivot = band[k * width + kl];
            if !(pivot.is_finite() && pivot != 0.0) {
                return Err(Error::SolverDivergence(format!("zero or non-finite pivot {pivot} at row {k}")));
            }
            let jmax = (k + ku).min(n - 1);
            for i in k + 1..=(k + kl).min(n - 1) {
                let lik = i * width + k + kl - i;
                if band[lik] == 0.0 {
                    continue;
                }
                let l = band[lik] / pivot;
                band[lik] = l;
                let (upper, lower) = band.split_at_mut(i * width);
                let krow = &upper[k * width..];
                let irow = &mut lower[..width];
                for j in k + 1..=jmax {
                    irow[j + kl - i] -= l * krow[j + kl - k];
                }
            }
        }
        Ok(BandedLu { n, kl, ku, width, band })
    }

    /// Solves `LU x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        for i in 0..n {
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = b[i];
            for j in i.saturating_sub(kl)..i {
                s -= row[j + kl - i] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = b[i];
            for j in i + 1..=(i + ku).min(n - 1) {
                s -= row[j + kl - i] * b[j];
            }
            b[i] = s / row[kl];
        }
    }
}

/// Outcome of a refined direct solve.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub residual_inf_norm: f64,
    pub refinements: usize,
}

/// Target residual of every solve.
pub const RESIDUAL_TARGET: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 8;

/// Direct solve followed by iterative refinement until `‖b − Ax‖∞ ≤ 1e-10`.
///
/// When the rounding floor `64 ε ‖|A||x|‖∞` of the stored solution lies above
/// the target, the floor is accepted instead; anything worse is reported as
/// [`Error::SolverDivergence`].
pub fn solve_refined(a: &CsrMatrix, lu: &BandedLu, b: &[f64]) -> Result<LinearSolution> {
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    let mut r = vec![0.0; b.len()];
    let mut refinements = 0;
    loop {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDivergence("non-finite solution".into()));
        }
        a.residual(&x, b, &mut r);
        let res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 64.0 * f64::EPSILON * a.abs_product_norm(&x);
        if res <= RESIDUAL_TARGET || (refinements >= 2 && res <= floor) {
            return Ok(LinearSolution { x, residual_inf_norm: res, refinements });
        }
        if refinements == MAX_REFINEMENTS {
            return Err(Error::SolverDivergence(format!(
                "residual {res:e} after {refinements} refinement sweeps (rounding floor {floor:e})"
            )));
        }
        lu.solve_in_place(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
        refinements += 1;
    }
}

/// Factor and solve in one call.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<LinearSolution> {
    let lu = BandedLu::factor(a)?;
    solve_refined(a, &lu, b)
}
