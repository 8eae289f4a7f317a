//! Flags of the abnormal extremals and the class of a point.
//!
//! On the annihilator of the square of the distribution, the pull-back of
//! the distribution generates a flag of subspaces under iterated brackets
//! with the characteristic field. The number of steps before the flag
//! stabilizes is the class of the point; the class is maximal exactly on
//! the regular locus where the canonical projective curve (and ultimately
//! the canonical frame) exists.

use num::{BigRational, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::cotangent::{CotangentChart, CotangentError};
use crate::geometry::{lie_bracket, GeometryError, VectorField};
use crate::linalg::{QMatrix, SymMatrix};
use crate::symca::{poly_gcd, Poly, Rat, RationalExpr, SymcaError};

#[derive(Debug, Error)]
pub enum FlagError {
    #[error(transparent)]
    Cotangent(#[from] CotangentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expression error: {0}")]
    Symbolic(#[from] SymcaError),
    #[error("point is not on the annihilator chart: {0}")]
    BadPoint(String),
    #[error("internal consistency failure: {0}")]
    Inconsistent(String),
}

/// Basis rows (reduced echelon form) of a subspace, in the coordinates of
/// the annihilator chart: base coordinates first, then u_4..u_n.
pub type Subspace = Vec<Vec<Rat>>;

/// Scale a field by the least common multiple of its component denominators.
/// The span is unchanged wherever the field is defined, and the polynomial
/// result keeps the bracket recursion free of rational-function reduction.
fn clear_denominators(f: &VectorField) -> VectorField {
    let Some(first) = f.components.first() else {
        return f.clone();
    };
    let mut l = Poly::one(first.nvars());
    for c in &f.components {
        let d = c.denominator();
        if !d.is_constant() {
            let g = poly_gcd(&l, d);
            l = l.mul(&d.div_exact(&g).expect("gcd divides"));
        }
    }
    if l.is_constant() {
        return f.clone();
    }
    f.scale_expr(&RationalExpr::from_poly(l))
}

fn canonical_basis(rows: Vec<Vec<Rat>>) -> Subspace {
    if rows.is_empty() {
        return Vec::new();
    }
    let (r, pivots) = QMatrix::from_rows(rows).rref();
    (0..pivots.len()).map(|i| r.row(i).to_vec()).collect()
}

fn span_rank(rows: &[Vec<Rat>]) -> usize {
    if rows.is_empty() {
        0
    } else {
        QMatrix::from_rows(rows.to_vec()).rank()
    }
}

fn in_span(basis: &[Vec<Rat>], v: &[Rat]) -> bool {
    let mut rows = basis.to_vec();
    let r0 = span_rank(&rows);
    rows.push(v.to_vec());
    span_rank(&rows) == r0
}

/// Flag data at a single point of the annihilator chart.
#[derive(Debug)]
pub struct FlagAtPoint {
    pub point: Vec<Rat>,
    /// Spanning bases of the ascending flag, index i = 0, 1, ...
    pub ascending: Vec<Subspace>,
    /// Skew-complements of the ascending flag, index i = 0, 1, ...
    pub descending: Vec<Subspace>,
    /// Vertical parts of the descending flag.
    pub vertical: Vec<Subspace>,
    /// Value of the characteristic field at the point.
    pub characteristic: Vec<Rat>,
    pub nu: usize,
}

#[derive(Debug, Serialize)]
pub struct ClassReport {
    pub nu: usize,
    pub maximal: bool,
    pub regular_locus_member: bool,
    pub dims_ascending: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct FlagDimensionTable {
    pub point: Vec<String>,
    pub dims_ascending: Vec<usize>,
    pub dims_descending: Vec<usize>,
    pub dims_vertical: Vec<usize>,
    pub nu: usize,
    pub maximal: bool,
}

/// Flag machinery attached to a cotangent chart. Symbolic data (spanning
/// families, the form matrix on coordinate fields) is computed once;
/// per-point results are exact evaluations.
pub struct FlagComputer<'a> {
    pub ct: &'a CotangentChart,
    /// Characteristic field without normalization; defined on all of the
    /// annihilator chart minus {u_4 = u_5 = 0}.
    pub c_raw: VectorField,
    /// families[i] spans the i-th ascending subspace.
    families: Vec<Vec<VectorField>>,
    /// Form values on pairs of coordinate fields of the annihilator chart.
    sigma_basis: Vec<Vec<RationalExpr>>,
    /// Coordinate indices (into the full chart) of the annihilator chart.
    a_indices: Vec<usize>,
}

const FLAG_TERM_LIMIT: usize = 200_000;

impl<'a> FlagComputer<'a> {
    pub fn new(ct: &'a CotangentChart) -> Result<Self, FlagError> {
        let n = ct.n();
        let c_raw = ct.characteristic_raw()?;
        let a_indices: Vec<usize> = (0..n).chain((n + 3)..(2 * n)).collect();

        // initial spanning family: lifted generators and vertical fields
        let mut initial = vec![
            clear_denominators(&ct.restrict_to_annihilator(&ct.frame_on_full(0))?),
            clear_denominators(&ct.restrict_to_annihilator(&ct.frame_on_full(1))?),
        ];
        for i in 4..=n {
            initial.push(VectorField::basis(&ct.full, n + i - 1));
        }

        // iterated brackets with the characteristic field; two extra
        // levels past the maximal class for stabilization checks
        let depth = n - 3 + 2;
        let c_poly = clear_denominators(&c_raw);
        let mut families = vec![initial.clone()];
        let mut frontier = initial;
        for _ in 1..=depth {
            let mut next_frontier = Vec::new();
            let mut family = families.last().unwrap().clone();
            for f in &frontier {
                let b = clear_denominators(&lie_bracket(&c_poly, f)?);
                let size = b.num_terms();
                if size > FLAG_TERM_LIMIT {
                    return Err(GeometryError::ResourceLimit {
                        what: "flag bracket terms",
                        size,
                        limit: FLAG_TERM_LIMIT,
                    }
                    .into());
                }
                if !b.is_zero() {
                    family.push(b.clone());
                    next_frontier.push(b);
                }
            }
            families.push(family);
            frontier = next_frontier;
        }

        // form matrix on coordinate fields of the annihilator chart
        let dim_a = a_indices.len();
        let zero = BigRational::zero();
        let assign: Vec<(usize, Rat)> = (0..3).map(|i| (n + i, zero.clone())).collect();
        let mut sigma_basis = vec![vec![RationalExpr::zero(2 * n); dim_a]; dim_a];
        for (ai, &fi) in a_indices.iter().enumerate() {
            for (aj, &fj) in a_indices.iter().enumerate().skip(ai + 1) {
                let s = ct
                    .sigma(&VectorField::basis(&ct.full, fi), &VectorField::basis(&ct.full, fj))
                    .substitute(&assign)?;
                sigma_basis[aj][ai] = s.neg();
                sigma_basis[ai][aj] = s;
            }
        }

        Ok(FlagComputer { ct, c_raw, families, sigma_basis, a_indices })
    }

    pub fn n(&self) -> usize {
        self.ct.n()
    }

    /// Dimension of the annihilator chart, 2n - 3.
    pub fn a_dim(&self) -> usize {
        self.a_indices.len()
    }

    fn check_point(&self, lambda: &[Rat]) -> Result<(), FlagError> {
        let n = self.n();
        if lambda.len() != 2 * n {
            return Err(FlagError::BadPoint(format!(
                "expected {} coordinates, got {}",
                2 * n,
                lambda.len()
            )));
        }
        for i in 0..3 {
            if !lambda[n + i].is_zero() {
                return Err(FlagError::BadPoint(format!("u{} must be zero", i + 1)));
            }
        }
        if (4..=n).all(|i| lambda[n + i - 1].is_zero()) {
            return Err(FlagError::BadPoint("zero covector excluded".into()));
        }
        Ok(())
    }

    /// Evaluate a full-chart field and project to annihilator coordinates,
    /// failing if the field is not tangent to the annihilator there.
    fn a_vector(&self, f: &VectorField, lambda: &[Rat]) -> Result<Vec<Rat>, FlagError> {
        let n = self.n();
        let v = f.evaluate(lambda).map_err(FlagError::Symbolic)?;
        for i in 0..3 {
            if !v[n + i].is_zero() {
                return Err(FlagError::Inconsistent(format!(
                    "field not tangent to the annihilator: du{} component {}",
                    i + 1,
                    v[n + i]
                )));
            }
        }
        Ok(self.a_indices.iter().map(|&i| v[i].clone()).collect())
    }

    fn family_at(&self, level: usize, lambda: &[Rat]) -> Result<Vec<Vec<Rat>>, FlagError> {
        self.families[level].iter().map(|f| self.a_vector(f, lambda)).collect()
    }

    /// Form matrix evaluated at a point, on annihilator coordinates.
    pub fn sigma_at(&self, lambda: &[Rat]) -> Result<QMatrix, FlagError> {
        let d = self.a_dim();
        let mut m = QMatrix::zero(d, d);
        for i in 0..d {
            for j in 0..d {
                if !self.sigma_basis[i][j].is_zero() {
                    *m.at_mut(i, j) =
                        self.sigma_basis[i][j].evaluate(lambda).map_err(FlagError::Symbolic)?;
                }
            }
        }
        Ok(m)
    }

    /// Skew-complement of the span of `rows` w.r.t. the evaluated form.
    fn skew_complement(&self, sigma: &QMatrix, rows: &[Vec<Rat>]) -> Subspace {
        let d = self.a_dim();
        if rows.is_empty() {
            return (0..d).map(|i| QMatrix::identity(d).row(i).to_vec()).collect();
        }
        // v in complement iff (row . sigma) v = 0 for every spanning row
        let pairing: Vec<Vec<Rat>> = rows
            .iter()
            .map(|w| {
                (0..d)
                    .map(|j| (0..d).map(|i| &w[i] * sigma.at(i, j)).sum())
                    .collect()
            })
            .collect();
        canonical_basis(QMatrix::from_rows(pairing).nullspace())
    }

    /// Intersection of a subspace with the vertical distribution
    /// (annihilator coordinates n..2n-4).
    fn vertical_part(&self, basis: &Subspace) -> Subspace {
        let n = self.n();
        if basis.is_empty() {
            return Vec::new();
        }
        // combinations of basis rows with vanishing base components
        let horiz: Vec<Vec<Rat>> =
            basis.iter().map(|r| r[..n].to_vec()).collect();
        let mut horiz_t = QMatrix::zero(n, basis.len());
        for (r, row) in horiz.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                *horiz_t.at_mut(c, r) = v.clone();
            }
        }
        let combos = horiz_t.nullspace();
        let vecs: Vec<Vec<Rat>> = combos
            .iter()
            .map(|c| {
                (0..self.a_dim())
                    .map(|j| c.iter().zip(basis).map(|(ck, row)| ck * &row[j]).sum())
                    .collect()
            })
            .collect();
        canonical_basis(vecs)
    }

    /// Full flag at a point, with all structural invariants asserted.
    pub fn flag_at(&self, lambda: &[Rat]) -> Result<FlagAtPoint, FlagError> {
        self.check_point(lambda)?;
        let n = self.n();
        let sigma = self.sigma_at(lambda)?;
        let c_val = self.a_vector(&self.c_raw, lambda)?;
        if c_val.iter().all(|v| v.is_zero()) {
            return Err(FlagError::BadPoint("characteristic field vanishes (u4 = u5 = 0)".into()));
        }

        let mut ascending = Vec::new();
        let mut dims = Vec::new();
        for level in 0..self.families.len() {
            let basis = canonical_basis(self.family_at(level, lambda)?);
            dims.push(basis.len());
            ascending.push(basis);
        }
        let nu = (0..dims.len() - 1)
            .find(|&i| dims[i + 1] == dims[i])
            .ok_or_else(|| {
                FlagError::Inconsistent("ascending flag did not stabilize".into())
            })?;
        if nu == 0 || nu > n - 3 {
            return Err(FlagError::Inconsistent(format!("class {nu} out of range 1..={}", n - 3)));
        }
        // monotone stabilization for two further steps
        for i in nu..dims.len() - 1 {
            if dims[i + 1] != dims[i] {
                return Err(FlagError::Inconsistent(
                    "flag grew again after stabilizing".into(),
                ));
            }
        }

        let mut descending = Vec::new();
        let mut vertical = Vec::new();
        for basis in &ascending {
            let comp = self.skew_complement(&sigma, basis);
            vertical.push(self.vertical_part(&comp));
            descending.push(comp);
        }

        let flag = FlagAtPoint {
            point: lambda.to_vec(),
            ascending,
            descending,
            vertical,
            characteristic: c_val,
            nu,
        };
        self.check_invariants(&flag)?;
        Ok(flag)
    }

    fn check_invariants(&self, flag: &FlagAtPoint) -> Result<(), FlagError> {
        let n = self.n();
        let fail = |msg: String| Err(FlagError::Inconsistent(msg));
        let da: Vec<usize> = flag.ascending.iter().map(|b| b.len()).collect();
        let dd: Vec<usize> = flag.descending.iter().map(|b| b.len()).collect();
        if da[0] != n - 1 {
            return fail(format!("dim of the lift is {} instead of {}", da[0], n - 1));
        }
        if da[1] != da[0] + 1 {
            return fail("first ascending step must have corank 1".into());
        }
        for w in da.windows(2) {
            if !(w[1] == w[0] || w[1] == w[0] + 1) {
                return fail("ascending increments must be 0 or 1".into());
            }
        }
        if da.iter().any(|&d| d > 2 * n - 4) {
            return fail(format!("ascending dimension exceeds {}", 2 * n - 4));
        }
        if dd[0] != da[0] || flag.descending[0] != flag.ascending[0] {
            return fail("zeroth descending subspace must equal the lift".into());
        }
        if dd[1] + 1 != dd[0] {
            return fail("first descending step must drop dimension by 1".into());
        }
        for w in dd.windows(2) {
            if !(w[1] == w[0] || w[1] + 1 == w[0]) {
                return fail("descending decrements must be 0 or 1".into());
            }
        }
        // sigma vanishes on the lift
        let sigma = self.sigma_at(&flag.point)?;
        let j = &flag.ascending[0];
        for a in j {
            for b in j {
                let s: Rat = (0..self.a_dim())
                    .map(|i| {
                        (0..self.a_dim())
                            .map(|k| &a[i] * sigma.at(i, k) * &b[k])
                            .sum::<Rat>()
                    })
                    .sum();
                if !s.is_zero() {
                    return fail("form does not vanish on the lift".into());
                }
            }
        }
        // descending splits as vertical plus the characteristic direction
        for i in 1..flag.descending.len() {
            let d = &flag.descending[i];
            let v = &flag.vertical[i];
            if d.is_empty() {
                continue;
            }
            if !in_span(d, &flag.characteristic) {
                return fail(format!("characteristic direction not inside descending {i}"));
            }
            if in_span(v, &flag.characteristic) {
                return fail(format!("characteristic direction inside vertical part {i}"));
            }
            if v.len() + 1 != d.len() {
                return fail(format!(
                    "descending {i} is not vertical plus characteristic: {} vs {}",
                    d.len(),
                    v.len()
                ));
            }
        }
        Ok(())
    }

    /// Class of the point: number of strict steps of the ascending flag.
    pub fn class_nu(&self, lambda: &[Rat]) -> Result<ClassReport, FlagError> {
        self.check_point(lambda)?;
        let n = self.n();
        let mut dims = Vec::new();
        for level in 0..self.families.len() {
            dims.push(span_rank(&self.family_at(level, lambda)?));
        }
        let nu = (0..dims.len() - 1)
            .find(|&i| dims[i + 1] == dims[i])
            .ok_or_else(|| FlagError::Inconsistent("flag did not stabilize".into()))?;
        if nu == 0 || nu > n - 3 {
            return Err(FlagError::Inconsistent(format!("class {nu} out of range 1..={}", n - 3)));
        }
        Ok(ClassReport {
            nu,
            maximal: nu == n - 3,
            regular_locus_member: nu == n - 3,
            dims_ascending: dims,
        })
    }

    pub fn dimension_table(&self, lambda: &[Rat]) -> Result<FlagDimensionTable, FlagError> {
        let flag = self.flag_at(lambda)?;
        Ok(FlagDimensionTable {
            point: lambda.iter().map(|r| r.to_string()).collect(),
            dims_ascending: flag.ascending.iter().map(|b| b.len()).collect(),
            dims_descending: flag.descending.iter().map(|b| b.len()).collect(),
            dims_vertical: flag.vertical.iter().map(|b| b.len()).collect(),
            nu: flag.nu,
            maximal: flag.nu == self.n() - 3,
        })
    }

    /// Symbolic spanning family of the i-th ascending subspace.
    pub fn ascending_family(&self, i: usize) -> &[VectorField] {
        &self.families[i]
    }

    /// Symbolic spanning fields of the i-th descending subspace, valid on
    /// the dense open set where the generic ranks hold: nullspace, over the
    /// rational-function field, of the pairing against the ascending family.
    pub fn descending_symbolic(&self, i: usize) -> Result<Vec<VectorField>, FlagError> {
        let n = self.n();
        let d = self.a_dim();
        let rows: Vec<Vec<RationalExpr>> = self.families[i]
            .iter()
            .map(|f| {
                (0..d)
                    .map(|j| {
                        let mut acc = RationalExpr::zero(2 * n);
                        for (k, &fk) in self.a_indices.iter().enumerate() {
                            let comp = &f.components[fk];
                            if !comp.is_zero() && !self.sigma_basis[k][j].is_zero() {
                                acc = acc.add(&comp.mul(&self.sigma_basis[k][j]));
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let ns = SymMatrix::from_rows(2 * n, rows).nullspace().map_err(FlagError::Symbolic)?;
        Ok(ns
            .into_iter()
            .map(|v| {
                let mut comps = vec![RationalExpr::zero(2 * n); 2 * n];
                for (k, &fk) in self.a_indices.iter().enumerate() {
                    comps[fk] = v[k].clone();
                }
                VectorField { chart: self.ct.full.clone(), components: comps }
            })
            .collect())
    }

    /// Symbolic spanning fields of the vertical part of the i-th descending
    /// subspace (combinations with vanishing base components).
    pub fn vertical_symbolic(&self, i: usize) -> Result<Vec<VectorField>, FlagError> {
        let n = self.n();
        let basis = self.descending_symbolic(i)?;
        if basis.is_empty() {
            return Ok(Vec::new());
        }
        let horiz = SymMatrix::from_rows(
            2 * n,
            (0..n)
                .map(|a| basis.iter().map(|f| f.components[a].clone()).collect())
                .collect(),
        );
        let combos = horiz.nullspace().map_err(FlagError::Symbolic)?;
        let mut out = Vec::new();
        for c in combos {
            let mut acc = VectorField::zero(&self.ct.full);
            for (ck, f) in c.iter().zip(&basis) {
                if !ck.is_zero() {
                    acc = acc.add(&f.scale_expr(ck))?;
                }
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// The reduced symplectic space at a point: the kernel of the tautological
/// form modulo the characteristic direction and the Euler direction,
/// carrying the induced form. Dimension 2(n-3).
#[derive(Debug)]
pub struct QuotientModel {
    pub dim: usize,
    /// Rows spanning the kernel of the tautological form; the first two
    /// are the characteristic and Euler vectors.
    pub kernel_basis: Vec<Vec<Rat>>,
    pub sigma_bar: QMatrix,
    /// Images of the lift and the two flags.
    pub lift_image: Subspace,
    pub ascending_images: Vec<Subspace>,
    pub descending_images: Vec<Subspace>,
}

impl<'a> FlagComputer<'a> {
    /// Euler vector in annihilator coordinates at a point.
    fn euler_at(&self, lambda: &[Rat]) -> Result<Vec<Rat>, FlagError> {
        self.a_vector(&self.ct.euler_field(), lambda)
    }

    /// Tautological-form row at a point: s(E_alpha) for coordinate fields.
    fn s_row(&self, lambda: &[Rat]) -> Result<Vec<Rat>, FlagError> {
        let sigma = self.sigma_at(lambda)?;
        let e = self.euler_at(lambda)?;
        // s(v) = sigma(e, v)
        Ok((0..self.a_dim())
            .map(|j| (0..self.a_dim()).map(|i| &e[i] * sigma.at(i, j)).sum())
            .collect())
    }

    pub fn quotient_symplectic(&self, lambda: &[Rat]) -> Result<QuotientModel, FlagError> {
        let flag = self.flag_at(lambda)?;
        let n = self.n();
        let d = self.a_dim();
        let sigma = self.sigma_at(lambda)?;
        let srow = self.s_row(lambda)?;
        let kernel = QMatrix::from_rows(vec![srow]).nullspace();
        if kernel.len() != d - 1 {
            return Err(FlagError::Inconsistent(format!(
                "tautological form has corank {} instead of 1",
                d - kernel.len()
            )));
        }
        // basis for the kernel starting with the two distinguished vectors
        let c_val = flag.characteristic.clone();
        let e_val = self.euler_at(lambda)?;
        let mut basis = vec![c_val, e_val];
        if span_rank(&basis) != 2 {
            return Err(FlagError::Inconsistent(
                "characteristic and Euler vectors are collinear".into(),
            ));
        }
        for v in kernel {
            if basis.len() == d - 1 {
                break;
            }
            let r = span_rank(&basis);
            basis.push(v);
            if span_rank(&basis) == r {
                basis.pop();
            }
        }
        if basis.len() != d - 1 {
            return Err(FlagError::Inconsistent("kernel basis completion failed".into()));
        }
        let w_dim = d - 3; // = 2(n-3)
        debug_assert_eq!(w_dim, 2 * (n - 3));

        let mut sigma_bar = QMatrix::zero(w_dim, w_dim);
        for i in 0..w_dim {
            for j in 0..w_dim {
                let a = &basis[i + 2];
                let b = &basis[j + 2];
                *sigma_bar.at_mut(i, j) = (0..d)
                    .map(|p| (0..d).map(|q| &a[p] * sigma.at(p, q) * &b[q]).sum::<Rat>())
                    .sum();
            }
        }

        // project a subspace: coordinates in the kernel basis, drop the
        // characteristic and Euler columns
        let mut basis_t = QMatrix::zero(d, d - 1);
        for (c, row) in basis.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                *basis_t.at_mut(r, c) = v.clone();
            }
        }
        let project = |s: &Subspace| -> Result<Subspace, FlagError> {
            let mut rows = Vec::new();
            for v in s {
                let coords = basis_t.solve(v).ok_or_else(|| {
                    FlagError::Inconsistent("flag vector escapes the kernel".into())
                })?;
                rows.push(coords[2..].to_vec());
            }
            Ok(canonical_basis(rows))
        };

        let lift_image = project(&flag.ascending[0])?;
        let ascending_images: Result<Vec<_>, _> =
            flag.ascending.iter().map(&project).collect();
        let descending_images: Result<Vec<_>, _> =
            flag.descending.iter().map(&project).collect();
        Ok(QuotientModel {
            dim: w_dim,
            kernel_basis: basis,
            sigma_bar,
            lift_image,
            ascending_images: ascending_images?,
            descending_images: descending_images?,
        })
    }
}

impl QuotientModel {
    /// Induced-form pairing of two vectors given in quotient coordinates.
    pub fn pair(&self, a: &[Rat], b: &[Rat]) -> Rat {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| &a[i] * self.sigma_bar.at(i, j) * &b[j]).sum::<Rat>())
            .sum()
    }

    /// Skew-complement of a subspace inside the quotient.
    pub fn skew_complement(&self, s: &Subspace) -> Subspace {
        if s.is_empty() {
            return (0..self.dim).map(|i| QMatrix::identity(self.dim).row(i).to_vec()).collect();
        }
        let rows: Vec<Vec<Rat>> = s
            .iter()
            .map(|w| {
                (0..self.dim)
                    .map(|j| (0..self.dim).map(|i| &w[i] * self.sigma_bar.at(i, j)).sum())
                    .collect()
            })
            .collect();
        canonical_basis(QMatrix::from_rows(rows).nullspace())
    }
}
