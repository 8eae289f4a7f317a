//! Lift of the distribution to the cotangent bundle.
//!
//! Fixing a frame X_1..X_n of bracket words adapted to the distribution
//! defines fiber coordinates u_i = p . X_i (quasi-impulses). In these
//! coordinates the tautological 1-form, the symplectic form, Hamiltonian
//! lifts, the Euler field of fiber dilations, and the characteristic line
//! field of the annihilator of the square of the distribution all become
//! rational, so every downstream invariant stays exact.

use num::BigRational;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{ad_power, lie_bracket, Chart, DistributionSpec, GeometryError, VectorField};
use crate::linalg::{QMatrix, SymMatrix};
use crate::symca::{Rat, RationalExpr, SymcaError};

#[derive(Debug, Error)]
pub enum CotangentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expression error: {0}")]
    Symbolic(#[from] SymcaError),
    #[error("frame completion failed: rank stalled at {rank} of {needed} at the base point")]
    FrameIncomplete { rank: usize, needed: usize },
    #[error("square of the distribution has dimension {dim} at the base point; the characteristic field needs dimension 5 of the cube")]
    NotRegular { dim: usize },
}

const AD_DEPTH_CAP: usize = 6;
const WORD_LENGTH_CAP: usize = 6;

/// Cotangent chart adapted to a frame of bracket words.
///
/// The full chart has coordinates (base coordinates, u_1..u_n). Frame
/// fields, the dual coframe, and the structure functions
/// [X_i,X_j] = sum_k c_ij^k X_k are precomputed symbolically.
pub struct CotangentChart {
    pub base: Chart,
    pub full: Chart,
    /// Frame fields on the base chart.
    pub frame: Vec<VectorField>,
    /// Human-readable bracket words for the frame choice.
    pub words: Vec<String>,
    /// Rational base point used for rank decisions during completion.
    pub base_point: Vec<Rat>,
    /// dim D^2 and dim D^3 at the base point.
    pub dim_d2: usize,
    pub dim_d3: usize,
    /// coframe[i][a]: a-th component of the i-th dual 1-form, on the full chart.
    coframe: Vec<Vec<RationalExpr>>,
    /// c[i][j][k] on the full chart; antisymmetric in (i, j).
    structure: Vec<Vec<Vec<RationalExpr>>>,
}

#[derive(Debug, Serialize)]
pub struct CotangentReport {
    pub frame_words: Vec<String>,
    pub coordinates: Vec<String>,
    pub dim_d2: usize,
    pub dim_d3: usize,
}

impl CotangentChart {
    /// Complete X_1, X_2 to a frame of bracket words and build the adapted
    /// chart. Completion prefers X_3=[X_1,X_2], X_4=[X_1,X_3],
    /// X_5=[X_2,X_3], then (ad X_2)^k X_5, then (ad X_2)^k X_4, then
    /// breadth-first bracket words, keeping each candidate that raises the
    /// rank at `q`.
    pub fn new(d: &DistributionSpec, q: &[Rat]) -> Result<Self, CotangentError> {
        let base = d.chart.clone();
        let n = base.dimension();
        if q.len() != n {
            return Err(GeometryError::Invalid(format!(
                "base point has {} coordinates, chart has {n}",
                q.len()
            ))
            .into());
        }
        let x3 = lie_bracket(&d.x1, &d.x2)?;
        let x4 = lie_bracket(&d.x1, &x3)?;
        let x5 = lie_bracket(&d.x2, &x3)?;

        let mut candidates: Vec<(String, VectorField)> = vec![
            ("X1".into(), d.x1.clone()),
            ("X2".into(), d.x2.clone()),
            ("X3 = [X1,X2]".into(), x3.clone()),
            ("X4 = [X1,X3]".into(), x4.clone()),
            ("X5 = [X2,X3]".into(), x5.clone()),
        ];
        for k in 1..=AD_DEPTH_CAP {
            candidates.push((
                format!("(ad X2)^{k} X5"),
                ad_power(&d.x2, &x5, k, 100_000).map_err(CotangentError::Geometry)?,
            ));
        }
        for k in 1..=AD_DEPTH_CAP {
            candidates.push((
                format!("(ad X2)^{k} X4"),
                ad_power(&d.x2, &x4, k, 100_000).map_err(CotangentError::Geometry)?,
            ));
        }

        let mut frame: Vec<VectorField> = Vec::new();
        let mut words: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<Rat>> = Vec::new();
        let mut rank = 0usize;
        let mut dim_d2 = 0usize;
        let mut dim_d3 = 0usize;
        let try_candidate = |word: String,
                                 f: VectorField,
                                 frame: &mut Vec<VectorField>,
                                 words: &mut Vec<String>,
                                 rows: &mut Vec<Vec<Rat>>,
                                 rank: &mut usize|
         -> Result<bool, CotangentError> {
            if f.is_zero() || *rank == n {
                return Ok(false);
            }
            let v = f.evaluate(q).map_err(CotangentError::Symbolic)?;
            rows.push(v);
            let r = QMatrix::from_rows(rows.clone()).rank();
            if r > *rank {
                *rank = r;
                frame.push(f);
                words.push(word);
                Ok(true)
            } else {
                rows.pop();
                Ok(false)
            }
        };

        let mut taken = 0usize;
        for (word, f) in candidates {
            try_candidate(word, f, &mut frame, &mut words, &mut rows, &mut rank)?;
            taken += 1;
            if taken == 3 {
                dim_d2 = rank;
            }
            if taken == 5 {
                dim_d3 = rank;
            }
            if rank == n {
                break;
            }
        }
        // breadth-first fallback over longer bracket words
        if rank < n {
            let mut frontier: Vec<(String, VectorField)> =
                vec![("X1".into(), d.x1.clone()), ("X2".into(), d.x2.clone())];
            for _ in 3..=WORD_LENGTH_CAP {
                let mut next = Vec::new();
                for (w, f) in &frontier {
                    for (gw, g) in [("X1", &d.x1), ("X2", &d.x2)] {
                        let b = lie_bracket(g, f)?;
                        let word = format!("[{gw},{w}]");
                        if b.is_zero() {
                            continue;
                        }
                        next.push((word.clone(), b.clone()));
                        try_candidate(word, b, &mut frame, &mut words, &mut rows, &mut rank)?;
                        if rank == n {
                            break;
                        }
                    }
                }
                if rank == n {
                    break;
                }
                frontier = next;
            }
        }
        if rank < n {
            return Err(CotangentError::FrameIncomplete { rank, needed: n });
        }

        // full chart: base names then u_1..u_n
        let mut names = base.names();
        for i in 1..=n {
            names.push(format!("u{i}"));
        }
        let full = Chart::from_names(names).map_err(CotangentError::Geometry)?;
        let var_map: Vec<usize> = (0..n).collect();

        // coframe = inverse of the frame component matrix, then extended
        let m = SymMatrix::from_rows(
            n,
            (0..n)
                .map(|a| (0..n).map(|k| frame[k].components[a].clone()).collect())
                .collect(),
        );
        let minv = m.inverse().map_err(CotangentError::Symbolic)?;
        let coframe: Vec<Vec<RationalExpr>> = (0..n)
            .map(|i| (0..n).map(|a| minv.at(i, a).extend_vars(2 * n, &var_map)).collect())
            .collect();

        // structure functions by symbolic solve of M c = [X_i, X_j]
        let mut structure = vec![vec![vec![RationalExpr::zero(2 * n); n]; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let b = lie_bracket(&frame[i], &frame[j])?;
                if b.is_zero() {
                    continue;
                }
                let c = m.solve(&b.components).map_err(CotangentError::Symbolic)?;
                for k in 0..n {
                    let ck = c[k].extend_vars(2 * n, &var_map);
                    structure[j][i][k] = ck.neg();
                    structure[i][j][k] = ck;
                }
            }
        }

        Ok(CotangentChart {
            base,
            full,
            frame,
            words,
            base_point: q.to_vec(),
            dim_d2,
            dim_d3,
            coframe,
            structure,
        })
    }

    pub fn n(&self) -> usize {
        self.base.dimension()
    }

    pub fn report(&self) -> CotangentReport {
        CotangentReport {
            frame_words: self.words.clone(),
            coordinates: self.full.names(),
            dim_d2: self.dim_d2,
            dim_d3: self.dim_d3,
        }
    }

    /// Structure function c_ij^k with [X_i,X_j] = sum_k c_ij^k X_k
    /// (0-based indices), as an expression on the full chart.
    pub fn structure_fn(&self, i: usize, j: usize, k: usize) -> &RationalExpr {
        &self.structure[i][j][k]
    }

    /// u-coordinate as an expression on the full chart (1-based i).
    pub fn u(&self, i: usize) -> RationalExpr {
        let n = self.n();
        assert!((1..=n).contains(&i));
        RationalExpr::var(2 * n, n + i - 1)
    }

    /// Frame field extended to the full chart (zero fiber components).
    pub fn frame_on_full(&self, k: usize) -> VectorField {
        let n = self.n();
        let var_map: Vec<usize> = (0..n).collect();
        let mut comps: Vec<RationalExpr> = self.frame[k]
            .components
            .iter()
            .map(|c| c.extend_vars(2 * n, &var_map))
            .collect();
        comps.extend(std::iter::repeat(RationalExpr::zero(2 * n)).take(n));
        VectorField { chart: self.full.clone(), components: comps }
    }

    /// Hamiltonian lift of the quasi-impulse u_{k+1} (0-based k):
    /// the lift acts on u_j by the impulse of [X_k, X_j].
    pub fn lift(&self, k: usize) -> VectorField {
        let n = self.n();
        let mut f = self.frame_on_full(k);
        for j in 0..n {
            let mut acc = RationalExpr::zero(2 * n);
            for l in 0..n {
                let c = &self.structure[k][j][l];
                if !c.is_zero() {
                    acc = acc.add(&self.u(l + 1).mul(c));
                }
            }
            f.components[n + j] = acc;
        }
        f
    }

    /// Hamiltonian lift of the quasi-impulse of an arbitrary base field Y:
    /// base part Y, fiber part determined by the impulses of [Y, X_j].
    pub fn hamiltonian_field(&self, y: &VectorField) -> Result<VectorField, CotangentError> {
        let n = self.n();
        if y.chart != self.base {
            return Err(GeometryError::ChartMismatch.into());
        }
        let var_map: Vec<usize> = (0..n).collect();
        let m = SymMatrix::from_rows(
            n,
            (0..n)
                .map(|a| (0..n).map(|k| self.frame[k].components[a].clone()).collect())
                .collect(),
        );
        let mut comps: Vec<RationalExpr> =
            y.components.iter().map(|c| c.extend_vars(2 * n, &var_map)).collect();
        for j in 0..n {
            let b = lie_bracket(y, &self.frame[j])?;
            let c = m.solve(&b.components).map_err(CotangentError::Symbolic)?;
            let mut acc = RationalExpr::zero(2 * n);
            for (l, cl) in c.iter().enumerate() {
                if !cl.is_zero() {
                    acc = acc.add(&self.u(l + 1).mul(&cl.extend_vars(2 * n, &var_map)));
                }
            }
            comps.push(acc);
        }
        Ok(VectorField { chart: self.full.clone(), components: comps })
    }

    /// Euler field of fiber dilations restricted to the annihilator chart:
    /// sum_{i>=4} u_i d/du_i.
    pub fn euler_field(&self) -> VectorField {
        let n = self.n();
        let mut f = VectorField::zero(&self.full);
        for i in 4..=n {
            f.components[n + i - 1] = self.u(i);
        }
        f
    }

    /// Decompose the base part of a full-chart field in the frame.
    pub fn frame_components(&self, v: &VectorField) -> Vec<RationalExpr> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut acc = RationalExpr::zero(2 * n);
                for a in 0..n {
                    if !v.components[a].is_zero() && !self.coframe[i][a].is_zero() {
                        acc = acc.add(&self.coframe[i][a].mul(&v.components[a]));
                    }
                }
                acc
            })
            .collect()
    }

    /// Tautological 1-form evaluated on a full-chart field.
    pub fn s_form(&self, v: &VectorField) -> RationalExpr {
        let n = self.n();
        let a = self.frame_components(v);
        let mut acc = RationalExpr::zero(2 * n);
        for (i, ai) in a.iter().enumerate() {
            if !ai.is_zero() {
                acc = acc.add(&self.u(i + 1).mul(ai));
            }
        }
        acc
    }

    /// Symplectic form sigma = d(s_form) on two full-chart fields, using
    /// the adapted-frame expression: sum_i (alpha_i b_i - beta_i a_i)
    /// minus sum_k u_k sum_{i<j} c_ij^k (a_i b_j - a_j b_i).
    pub fn sigma(&self, v: &VectorField, w: &VectorField) -> RationalExpr {
        let n = self.n();
        let a = self.frame_components(v);
        let b = self.frame_components(w);
        let mut acc = RationalExpr::zero(2 * n);
        for i in 0..n {
            let alpha = &v.components[n + i];
            let beta = &w.components[n + i];
            if !alpha.is_zero() && !b[i].is_zero() {
                acc = acc.add(&alpha.mul(&b[i]));
            }
            if !beta.is_zero() && !a[i].is_zero() {
                acc = acc.sub(&beta.mul(&a[i]));
            }
        }
        for k in 0..n {
            let uk = self.u(k + 1);
            for i in 0..n {
                for j in (i + 1)..n {
                    let c = &self.structure[i][j][k];
                    if c.is_zero() {
                        continue;
                    }
                    let cross = a[i].mul(&b[j]).sub(&a[j].mul(&b[i]));
                    if !cross.is_zero() {
                        acc = acc.sub(&uk.mul(c).mul(&cross));
                    }
                }
            }
        }
        acc
    }

    /// Substitute u_1 = u_2 = u_3 = 0 into every component.
    pub fn restrict_to_annihilator(&self, v: &VectorField) -> Result<VectorField, CotangentError> {
        let n = self.n();
        let zero = BigRational::from_integer(0.into());
        let assign: Vec<(usize, Rat)> =
            (0..3).map(|i| (n + i, zero.clone())).collect();
        let comps: Result<Vec<RationalExpr>, SymcaError> =
            v.components.iter().map(|c| c.substitute(&assign)).collect();
        Ok(VectorField { chart: self.full.clone(), components: comps? })
    }

    /// Characteristic field u_4 (lift of u_2) - u_5 (lift of u_1) on the
    /// annihilator chart, without normalization. Defined wherever u_4 or
    /// u_5 is nonzero, including the locus u_4 = 0.
    pub fn characteristic_raw(&self) -> Result<VectorField, CotangentError> {
        if self.dim_d3 != 5 {
            return Err(CotangentError::NotRegular { dim: self.dim_d3 });
        }
        let l1 = self.lift(0);
        let l2 = self.lift(1);
        let c = l2.scale_expr(&self.u(4)).add(&l1.scale_expr(&self.u(5)).neg())?;
        self.restrict_to_annihilator(&c)
    }

    /// Characteristic field normalized by u_4; the generator used by every
    /// flow construction on the component {u_4 != 0}.
    pub fn characteristic_normalized(&self) -> Result<VectorField, CotangentError> {
        let raw = self.characteristic_raw()?;
        let inv = self.u(4).recip().map_err(CotangentError::Symbolic)?;
        Ok(raw.scale_expr(&inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_ode, from_ode_text};
    use crate::symca::{rat, rat_int};

    fn generic_base_point(n: usize) -> Vec<Rat> {
        (0..n).map(|i| rat(i as i64 + 1, 2)).collect()
    }

    fn generic_full_point(n: usize) -> Vec<Rat> {
        let mut q = generic_base_point(n);
        for i in 0..n {
            q.push(rat(2 * i as i64 + 3, 5));
        }
        q
    }

    #[test]
    fn flat_model_completion_uses_ad_words() {
        let n = 7;
        let d = flat_ode(n).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(n)).unwrap();
        assert_eq!(ct.words.len(), n);
        assert_eq!(ct.words[5], "(ad X2)^1 X5");
        assert_eq!(ct.words[6], "(ad X2)^2 X5");
        assert_eq!(ct.dim_d2, 3);
        assert_eq!(ct.dim_d3, 5);
    }

    #[test]
    fn cartan_frame_is_first_five_brackets() {
        let d = from_ode_text(5, "p2^2").unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(5)).unwrap();
        assert_eq!(ct.words.len(), 5);
        assert!(ct.words[4].starts_with("X5"));
    }

    #[test]
    fn involutive_distribution_fails_completion() {
        use crate::geometry::{Chart, DistributionSpec, VectorField};
        let chart = Chart::new(&["x", "y", "z"]).unwrap();
        let d = DistributionSpec::from_fields(
            VectorField::basis(&chart, 0),
            VectorField::basis(&chart, 1),
        )
        .unwrap();
        let r = CotangentChart::new(&d, &generic_base_point(3));
        assert!(matches!(r, Err(CotangentError::FrameIncomplete { .. })));
    }

    #[test]
    fn lift_projects_to_frame_field() {
        let d = flat_ode(6).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(6)).unwrap();
        for k in 0..6 {
            let l = ct.lift(k);
            for a in 0..6 {
                assert_eq!(
                    l.components[a],
                    ct.frame[k].components[a].extend_vars(12, &[0, 1, 2, 3, 4, 5])
                );
            }
        }
    }

    #[test]
    fn poisson_bracket_of_first_two_impulses() {
        // sigma(lift(u1), lift(u2)) = u3 since [X1,X2] = X3
        let d = flat_ode(6).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(6)).unwrap();
        let s = ct.sigma(&ct.lift(0), &ct.lift(1));
        assert_eq!(s, ct.u(3));
    }

    #[test]
    fn lift_is_hamiltonian_for_sigma() {
        // sigma(lift(u_i), w) = -du_i(w) for arbitrary fields w
        let d = from_ode_text(5, "p2^2").unwrap();
        let n = 5;
        let ct = CotangentChart::new(&d, &generic_base_point(n)).unwrap();
        for i in [0usize, 1, 3] {
            let li = ct.lift(i);
            for j in 0..2 * n {
                let w = VectorField::basis(&ct.full, j);
                let got = ct.sigma(&li, &w);
                let expect = if j == n + i {
                    RationalExpr::constant(2 * n, rat_int(-1))
                } else {
                    RationalExpr::zero(2 * n)
                };
                assert_eq!(got, expect, "i={i}, j={j}");
            }
        }
    }

    #[test]
    fn hamiltonian_field_matches_lift_on_frame() {
        let d = flat_ode(6).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(6)).unwrap();
        for k in [0usize, 1, 2] {
            let via_general = ct.hamiltonian_field(&ct.frame[k].clone()).unwrap();
            assert_eq!(via_general, ct.lift(k));
        }
    }

    #[test]
    fn characteristic_field_flat_model() {
        // normalized: X2-bar - (u5/u4) X1-bar + sum_{i=5}^{m+2} u_{i+1} d/du_i
        let n = 7; // m = 4
        let d = flat_ode(n).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(n)).unwrap();
        let h = ct.characteristic_normalized().unwrap();
        let ratio = ct.u(5).div(&ct.u(4)).unwrap();
        let mut expect = ct
            .frame_on_full(1)
            .add(&ct.frame_on_full(0).scale_expr(&ratio).neg())
            .unwrap();
        for i in 5..=(n - 1) {
            expect.components[n + i - 1] = ct.u(i + 1);
        }
        assert_eq!(h, expect);
    }

    #[test]
    fn characteristic_field_is_tangent_and_in_kernel() {
        let n = 6;
        let d = flat_ode(n).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(n)).unwrap();
        let c = ct.characteristic_raw().unwrap();
        // tangency: no du_1, du_2, du_3 components
        for j in 0..3 {
            assert!(c.components[n + j].is_zero());
        }
        // kernel of sigma restricted to the annihilator: sigma(C, v) = 0
        // for v tangent to {u1=u2=u3=0}, checked at sample points
        let mut tangent_basis: Vec<VectorField> = Vec::new();
        for a in 0..n {
            tangent_basis.push(VectorField::basis(&ct.full, a));
        }
        for i in 4..=n {
            tangent_basis.push(VectorField::basis(&ct.full, n + i - 1));
        }
        let mut pt = generic_full_point(n);
        for i in 0..3 {
            pt[n + i] = rat_int(0);
        }
        for v in &tangent_basis {
            let s = ct.sigma(&c, v);
            let s0 = ct
                .restrict_to_annihilator(&VectorField {
                    chart: ct.full.clone(),
                    components: vec![s.clone(); 1]
                        .into_iter()
                        .chain(std::iter::repeat(RationalExpr::zero(2 * n)).take(2 * n - 1))
                        .collect(),
                })
                .unwrap();
            assert_eq!(s0.components[0].evaluate(&pt).unwrap(), rat_int(0));
        }
    }

    #[test]
    fn goursat_branch_rejected() {
        // Engel model on R^4: dim D^3 = 4
        let d = from_ode_text(4, "p0").unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(4)).unwrap();
        assert_eq!(ct.dim_d3, 4);
        assert!(matches!(
            ct.characteristic_raw(),
            Err(CotangentError::NotRegular { dim: 4 })
        ));
    }

    #[test]
    fn euler_field_scales_fibers_only() {
        let d = flat_ode(6).unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(6)).unwrap();
        let e = ct.euler_field();
        for a in 0..6 {
            assert!(e.components[a].is_zero());
        }
        for i in 4..=6 {
            assert_eq!(e.components[6 + i - 1], ct.u(i));
        }
    }

    #[test]
    fn projection_of_characteristic_lies_in_distribution() {
        let n = 6;
        let d = from_ode_text(n, "p3^2/2 + x*p3^3").unwrap();
        let ct = CotangentChart::new(&d, &generic_base_point(n)).unwrap();
        let c = ct.characteristic_raw().unwrap();
        // base part must be u4 X2 - u5 X1: a combination of the generators
        let a = ct.frame_components(&c);
        assert_eq!(a[0], ct.u(5).neg());
        assert_eq!(a[1], ct.u(4));
        for k in 2..n {
            assert!(a[k].is_zero(), "frame component {k} should vanish");
        }
    }
}
