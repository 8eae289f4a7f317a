//! Exact linear algebra over the rationals and over rational-function
//! fields.
//!
//! Two layers: `QMatrix` for matrices of `BigRational` (used when ranks are
//! taken at explicit rational points) and `SymMatrix` for matrices of
//! `RationalExpr` (used when a linear solve has to hold identically on a
//! chart, e.g. expanding a bracket in a symbolic frame).

use num::{BigRational, One, Zero};

use crate::symca::{Rat, RationalExpr, SymcaError};

/// Dense matrix of exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Rat>,
}

impl QMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        QMatrix { rows, cols, data: vec![BigRational::zero(); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        QMatrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = QMatrix::zero(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = BigRational::one();
        }
        m
    }

    pub fn at(&self, r: usize, c: usize) -> &Rat {
        &self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut Rat {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Rat] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reduced row echelon form; returns (rref, pivot column per pivot row).
    pub fn rref(&self) -> (QMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            // first nonzero entry in column c at or below row r
            let Some(p) = (r..m.rows).find(|&i| !m.at(i, c).is_zero()) else {
                continue;
            };
            if p != r {
                for j in 0..m.cols {
                    let a = m.at(p, j).clone();
                    let b = m.at(r, j).clone();
                    *m.at_mut(p, j) = b;
                    *m.at_mut(r, j) = a;
                }
            }
            let inv = BigRational::one() / m.at(r, c).clone();
            for j in c..m.cols {
                let v = m.at(r, j).clone() * &inv;
                *m.at_mut(r, j) = v;
            }
            for i in 0..m.rows {
                if i != r && !m.at(i, c).is_zero() {
                    let f = m.at(i, c).clone();
                    for j in c..m.cols {
                        let v = m.at(i, j).clone() - &f * m.at(r, j);
                        *m.at_mut(i, j) = v;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Basis of the right nullspace, one vector per free column.
    pub fn nullspace(&self) -> Vec<Vec<Rat>> {
        let (m, pivots) = self.rref();
        let mut basis = Vec::new();
        let pivot_set: Vec<Option<usize>> = {
            let mut v = vec![None; self.cols];
            for (row, &col) in pivots.iter().enumerate() {
                v[col] = Some(row);
            }
            v
        };
        for free in 0..self.cols {
            if pivot_set[free].is_some() {
                continue;
            }
            let mut vec_out = vec![BigRational::zero(); self.cols];
            vec_out[free] = BigRational::one();
            for (col, &rowopt) in pivot_set.iter().enumerate() {
                if let Some(row) = rowopt {
                    vec_out[col] = -m.at(row, free).clone();
                }
            }
            basis.push(vec_out);
        }
        basis
    }

    /// Solve `self * x = b`; `None` if inconsistent. Free variables are set
    /// to zero.
    pub fn solve(&self, b: &[Rat]) -> Option<Vec<Rat>> {
        assert_eq!(b.len(), self.rows);
        let mut aug = QMatrix::zero(self.rows, self.cols + 1);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *aug.at_mut(r, c) = self.at(r, c).clone();
            }
            *aug.at_mut(r, self.cols) = b[r].clone();
        }
        let (m, pivots) = aug.rref();
        if pivots.contains(&self.cols) {
            return None;
        }
        let mut x = vec![BigRational::zero(); self.cols];
        for (row, &col) in pivots.iter().enumerate() {
            x[col] = m.at(row, self.cols).clone();
        }
        Some(x)
    }
}

/// Dense matrix of rational expressions over a fixed chart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymMatrix {
    pub rows: usize,
    pub cols: usize,
    pub nvars: usize,
    data: Vec<RationalExpr>,
}

impl SymMatrix {
    pub fn zero(nvars: usize, rows: usize, cols: usize) -> Self {
        SymMatrix { rows, cols, nvars, data: vec![RationalExpr::zero(nvars); rows * cols] }
    }

    pub fn from_rows(nvars: usize, rows: Vec<Vec<RationalExpr>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        SymMatrix { rows: r, cols: c, nvars, data: rows.into_iter().flatten().collect() }
    }

    pub fn at(&self, r: usize, c: usize) -> &RationalExpr {
        &self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut RationalExpr {
        &mut self.data[r * self.cols + c]
    }

    /// Solve `self * x = b` identically in the chart coordinates. Fails with
    /// an error if the system is inconsistent or rank-deficient in a way
    /// that leaves no consistent assignment. Free variables are set to zero.
    pub fn solve(&self, b: &[RationalExpr]) -> Result<Vec<RationalExpr>, SymcaError> {
        assert_eq!(b.len(), self.rows);
        let mut aug = SymMatrix::zero(self.nvars, self.rows, self.cols + 1);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *aug.at_mut(r, c) = self.at(r, c).clone();
            }
            *aug.at_mut(r, self.cols) = b[r].clone();
        }
        let (m, pivots) = aug.rref()?;
        if pivots.contains(&self.cols) {
            return Err(SymcaError::DivisionByZero);
        }
        let mut x = vec![RationalExpr::zero(self.nvars); self.cols];
        for (row, &col) in pivots.iter().enumerate() {
            x[col] = m.at(row, self.cols).clone();
        }
        Ok(x)
    }

    /// Reduced row echelon form over the rational-function field. Pivot
    /// choice favors entries with few terms to limit expression growth.
    pub fn rref(&self) -> Result<(SymMatrix, Vec<usize>), SymcaError> {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let p = (r..m.rows)
                .filter(|&i| !m.at(i, c).is_zero())
                .min_by_key(|&i| m.at(i, c).num_terms());
            let Some(p) = p else { continue };
            if p != r {
                for j in 0..m.cols {
                    let a = m.at(p, j).clone();
                    let b = m.at(r, j).clone();
                    *m.at_mut(p, j) = b;
                    *m.at_mut(r, j) = a;
                }
            }
            let inv = m.at(r, c).recip()?;
            for j in c..m.cols {
                *m.at_mut(r, j) = m.at(r, j).mul(&inv);
            }
            for i in 0..m.rows {
                if i != r && !m.at(i, c).is_zero() {
                    let f = m.at(i, c).clone();
                    for j in c..m.cols {
                        let v = m.at(i, j).sub(&f.mul(m.at(r, j)));
                        *m.at_mut(i, j) = v;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        Ok((m, pivots))
    }

    /// Generic rank (rank over the rational-function field).
    pub fn rank(&self) -> Result<usize, SymcaError> {
        Ok(self.rref()?.1.len())
    }

    /// Basis of the right nullspace over the rational-function field.
    pub fn nullspace(&self) -> Result<Vec<Vec<RationalExpr>>, SymcaError> {
        let (m, pivots) = self.rref()?;
        let mut pivot_set = vec![None; self.cols];
        for (row, &col) in pivots.iter().enumerate() {
            pivot_set[col] = Some(row);
        }
        let mut basis = Vec::new();
        for free in 0..self.cols {
            if pivot_set[free].is_some() {
                continue;
            }
            let mut v = vec![RationalExpr::zero(self.nvars); self.cols];
            v[free] = RationalExpr::one(self.nvars);
            for (col, &rowopt) in pivot_set.iter().enumerate() {
                if let Some(row) = rowopt {
                    v[col] = m.at(row, free).neg();
                }
            }
            basis.push(v);
        }
        Ok(basis)
    }

    /// Inverse over the rational-function field; errors if singular.
    pub fn inverse(&self) -> Result<SymMatrix, SymcaError> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut aug = SymMatrix::zero(self.nvars, n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                *aug.at_mut(r, c) = self.at(r, c).clone();
            }
            *aug.at_mut(r, n + r) = RationalExpr::one(self.nvars);
        }
        let (m, pivots) = aug.rref()?;
        if pivots.len() != n || pivots.iter().enumerate().any(|(i, &c)| c != i) {
            return Err(SymcaError::DivisionByZero);
        }
        let mut out = SymMatrix::zero(self.nvars, n, n);
        for r in 0..n {
            for c in 0..n {
                *out.at_mut(r, c) = m.at(r, n + c).clone();
            }
        }
        Ok(out)
    }

    /// Evaluate every entry at an explicit rational point.
    pub fn evaluate(&self, point: &[Rat]) -> Result<QMatrix, SymcaError> {
        let mut out = QMatrix::zero(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(r, c) = self.at(r, c).evaluate(point)?;
            }
        }
        Ok(out)
    }
}

/// Solve a consistent (possibly overdetermined) linear system given by
/// columns: find x with sum_j x_j cols[j] = rhs. Gaussian elimination with
/// partial pivoting on the augmented matrix; returns None when the columns
/// are rank deficient or the residual of the back-substituted solution is
/// large relative to the data.
pub fn solve_f64(cols: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let ncols = cols.len();
    let nrows = rhs.len();
    if ncols == 0 || cols.iter().any(|c| c.len() != nrows) {
        return None;
    }
    let mut aug: Vec<Vec<f64>> = (0..nrows)
        .map(|r| {
            let mut row: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            row.push(rhs[r]);
            row
        })
        .collect();
    let scale = aug
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut pivot_row = 0;
    let mut pivots = Vec::with_capacity(ncols);
    for col in 0..ncols {
        let mut best = pivot_row;
        for r in pivot_row..nrows {
            if aug[r][col].abs() > aug[best][col].abs() {
                best = r;
            }
        }
        if aug[best][col].abs() < 1e-10 * scale {
            return None;
        }
        aug.swap(pivot_row, best);
        for r in 0..nrows {
            if r != pivot_row && aug[r][col] != 0.0 {
                let f = aug[r][col] / aug[pivot_row][col];
                for c in col..=ncols {
                    aug[r][c] -= f * aug[pivot_row][c];
                }
            }
        }
        pivots.push(pivot_row);
        pivot_row += 1;
        if pivot_row == nrows {
            break;
        }
    }
    if pivots.len() < ncols {
        return None;
    }
    let mut x = vec![0.0; ncols];
    for (col, &pr) in pivots.iter().enumerate() {
        x[col] = aug[pr][ncols] / aug[pr][col];
    }
    // Residual check certifies consistency of the overdetermined rows.
    for r in 0..nrows {
        let mut acc = -rhs[r];
        for j in 0..ncols {
            acc += x[j] * cols[j][r];
        }
        if acc.abs() > 1e-6 * scale.max(x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            return None;
        }
    }
    Some(x)
}
