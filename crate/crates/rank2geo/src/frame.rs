//! Canonical moving frame on the fiber-extended characteristic variety.
//!
//! The characteristic curve machinery produces, along each abnormal
//! extremal, a parameterized curve in a linear symplectic quotient together
//! with its projective invariants. Passing to the bundle of projective
//! parameterizations adds two fiber coordinates `a > 0` and `b`: a section
//! of the bundle is a projective reparameterization with derivative `a` and
//! half-logarithmic second derivative `-b` at the flow origin. On this
//! extended space the construction singles out
//!
//! * four fields `h, g0, g1, g2` spanning a gl(2) action,
//! * a vertical generator `eps1` canonical up to sign and up to the span of
//!   `g0, g1, g2`,
//! * the chain `eps_{i+1} = [h, eps_i]` (projected modulo `h` in the lower
//!   range) and the closing element `eta = [eps_1, eps_{2m}]`.
//!
//! After an affine normalization of `eps1` the full frame has constant
//! structure coefficients exactly for the maximally symmetric model, which
//! is what `detect_max_symmetry` tests numerically.

use num::{BigRational, One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cotangent::{CotangentChart, CotangentError};
use crate::flags::{FlagComputer, FlagError};
use crate::geometry::{Chart, GeometryError, VectorField};
use crate::linalg::{solve_f64, SymMatrix};
use crate::symca::{Poly, Rat, RationalExpr, SymcaError};
use crate::wilczynski::{
    b_coefficients, canonical_section, CurveSection, ScaledField, WilczynskiError,
};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Cotangent(#[from] CotangentError),
    #[error(transparent)]
    Flag(#[from] FlagError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Wilczynski(#[from] WilczynskiError),
    #[error("expression error: {0}")]
    Symbolic(#[from] SymcaError),
    #[error("frame construction requires n > 5, got n = {0}")]
    LowDimension(usize),
    #[error("frame degenerate: {0}")]
    Degenerate(String),
    #[error("point sampling failed: {0}")]
    Sampling(String),
}

/// The sign branch of the affine normalization. The two branches produce
/// frames related by the exact reflection `eps_i -> -eps_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignBranch {
    Plus,
    Minus,
}

/// Frame data on the extended chart (cotangent coordinates, then `a`, `b`).
#[derive(Debug, Clone)]
pub struct SigmaFrame {
    pub chart: Chart,
    pub n: usize,
    pub m: usize,
    /// Base point with the fiber initialized to a = 1, b = 0.
    pub base_point: Vec<Rat>,
    /// Flow field (1/a) H - 2b d_a + ((B0/rho - b^2)/a) d_b.
    pub h: VectorField,
    /// Twice the fiber Euler field of the cotangent directions.
    pub g0: VectorField,
    /// 2a d_a.
    pub g1: VectorField,
    /// -a d_b.
    pub g2: VectorField,
    /// Curvature coefficient of the characteristic curve in the flow gauge.
    pub b_flow: RationalExpr,
    /// Rational part of the normalizing pairing, lifted to the chart.
    pub pair: RationalExpr,
    /// Canonical vertical generator a^{m - 1/2} E.
    pub epsilon1: ScaledField,
}

/// Result of the affine normalization of a vertical generator.
#[derive(Debug, Clone)]
pub struct NormalizedSection {
    pub epsilon1: ScaledField,
    /// Coefficients of g0, g1, g2 added to the (sign-adjusted) candidate,
    /// as rational parts relative to the candidate's scale class.
    pub mu: [RationalExpr; 3],
    /// The extracted invariants of the candidate before correction.
    pub kappa: [RationalExpr; 3],
    /// The invariants re-extracted after correction; zero when the
    /// normalization closed exactly.
    pub residual: [RationalExpr; 3],
}

impl SigmaFrame {
    /// Build the frame data for the distribution chart at `lambda`, a point
    /// of the characteristic variety written in full cotangent coordinates.
    pub fn new(ct: &CotangentChart, lambda: &[Rat]) -> Result<Self, FrameError> {
        let n = ct.n();
        if n < 6 {
            return Err(FrameError::LowDimension(n));
        }
        let m = n - 3;
        let fc = FlagComputer::new(ct)?;
        let sec = CurveSection::from_flags(&fc, ct, lambda)?;
        let (esec, pair) = canonical_section(ct, &sec)?;
        let bc = b_coefficients(ct, &esec, &[])?;

        let zero = BigRational::zero();
        let on_sigma: Vec<(usize, Rat)> = (0..3).map(|i| (n + i, zero.clone())).collect();
        let b_flow = bc.coeffs[2 * m - 2].substitute(&on_sigma)?;
        let pair = pair.substitute(&on_sigma)?;

        let mut names = ct.full.names();
        names.push("a".into());
        names.push("b".into());
        let chart = Chart::from_names(names)?;
        let dim = 2 * n + 2;
        let a_ix = 2 * n;
        let b_ix = 2 * n + 1;
        let a = RationalExpr::var(dim, a_ix);
        let b = RationalExpr::var(dim, b_ix);

        let lift = |f: &VectorField| -> Result<VectorField, FrameError> {
            let map: Vec<usize> = (0..2 * n).collect();
            let mut comps: Vec<RationalExpr> =
                f.components.iter().map(|c| c.extend_vars(dim, &map)).collect();
            comps.push(RationalExpr::zero(dim));
            comps.push(RationalExpr::zero(dim));
            Ok(VectorField::from_components(&chart, comps)?)
        };
        let lift_expr = |f: &RationalExpr| -> RationalExpr {
            let map: Vec<usize> = (0..2 * n).collect();
            f.extend_vars(dim, &map)
        };

        let h_base = lift(&ct.characteristic_normalized()?)?;
        let b_flow = lift_expr(&b_flow);
        let pair = lift_expr(&pair);

        // h = (1/a) H - 2b d_a + ((B0/rho - b^2)/a) d_b
        let rho = rho_rat(m);
        let mut h = h_base.scale_expr(&a.recip()?);
        h.components[a_ix] = b.scale(&Rat::from_integer((-2).into()));
        h.components[b_ix] = b_flow
            .scale(&(Rat::one() / rho))
            .sub(&b.mul(&b))
            .div(&a)?;

        let g0 = lift(&ct.euler_field())?.scale(&Rat::from_integer(2.into()));
        let mut g1 = VectorField::zero(&chart);
        g1.components[a_ix] = a.scale(&Rat::from_integer(2.into()));
        let mut g2 = VectorField::zero(&chart);
        g2.components[b_ix] = a.neg();

        // eps1 = a^{m - 1/2} |pair|^{-1/2} (lift of the section direction)
        let epsilon1 = ScaledField::new(
            vec![(a.clone(), (2 * m - 1) as i32), (pair.clone(), -1)],
            lift(&esec.field.field)?,
        );

        let mut base_point = lambda.to_vec();
        base_point.push(Rat::one());
        base_point.push(Rat::zero());

        Ok(SigmaFrame { chart, n, m, base_point, h, g0, g1, g2, b_flow, pair, epsilon1 })
    }

    /// The common scale tags of the vertical chain.
    pub fn scale_class(&self) -> Vec<(RationalExpr, i32)> {
        self.epsilon1.field_scale()
    }

    /// Rational square of a scale class: prod base^half.
    fn class_square(&self, tags: &[(RationalExpr, i32)]) -> Result<RationalExpr, FrameError> {
        let mut f = RationalExpr::one(self.chart.dimension());
        for (base, half) in tags {
            f = f.mul(&base.pow(*half)?);
        }
        Ok(f)
    }

    /// The chain eps_1, ..., eps_{2m} generated from a vertical candidate by
    /// bracketing with the flow field; the lower range is projected modulo
    /// the flow direction by killing the x-component.
    pub fn chain(&self, eps1: &ScaledField) -> Result<Vec<ScaledField>, FrameError> {
        let h = ScaledField::plain(self.h.clone());
        let a = RationalExpr::var(self.chart.dimension(), 2 * self.n);
        let mut out = vec![eps1.clone()];
        for i in 2..=2 * self.m {
            let mut next = h.bracket(out.last().unwrap())?;
            if i <= self.m - 1 {
                let tau = a.mul(&next.field.components[0]);
                if !tau.is_zero() {
                    next.field = next.field.add(&self.h.scale_expr(&tau).neg())?;
                }
            }
            out.push(next);
        }
        Ok(out)
    }

    /// The closing element eta = [eps_1, eps_{2m}].
    pub fn eta(&self, chain: &[ScaledField]) -> Result<ScaledField, FrameError> {
        Ok(chain[0].bracket(&chain[2 * self.m - 1])?)
    }

    /// Strip the scale class off a bracket of two chain elements, whose
    /// tags must have folded away, leaving a rational field.
    fn stripped(&self, sf: &ScaledField, class_sq: &RationalExpr) -> Result<VectorField, FrameError> {
        if !sf.field_scale().is_empty() {
            return Err(FrameError::Degenerate("bracket scale tags did not fold".into()));
        }
        Ok(sf.field.scale_expr(&class_sq.recip()?))
    }

    /// The invariants kappa_1, kappa_2, kappa_3 of a vertical candidate:
    /// kappa_1 from [eps1, eps2] modulo span{g0, g1, g2, eps1}, and
    /// kappa_2, kappa_3 from [eps1, eps4] modulo span{h, g0, g1, g2, eps1,
    /// eps2}. All three are rational parts relative to the candidate scale.
    pub fn kappas(
        &self,
        chain: &[ScaledField],
    ) -> Result<[RationalExpr; 3], FrameError> {
        let class_sq = self.class_square(&chain[0].field_scale())?;
        let dim = self.chart.dimension();

        let x = chain[0].bracket(&chain[1])?;
        let xw = self.stripped(&x, &class_sq)?;
        let cols1 = vec![
            &chain[1].field,
            &self.g0,
            &self.g1,
            &self.g2,
            &chain[0].field,
        ];
        let sol1 = self.decompose(dim, &cols1, &xw)?;
        let kappa1 = sol1[0].clone();

        let y = chain[0].bracket(&chain[3])?;
        let yw = self.stripped(&y, &class_sq)?;
        let cols2 = vec![
            &chain[2].field,
            &chain[3].field,
            &self.h,
            &self.g0,
            &self.g1,
            &self.g2,
            &chain[0].field,
            &chain[1].field,
        ];
        let sol2 = self.decompose(dim, &cols2, &yw)?;
        let kappa2 = sol2[0].clone();
        let kappa3 = sol2[1].clone();

        Ok([kappa1, kappa2, kappa3])
    }

    fn decompose(
        &self,
        dim: usize,
        cols: &[&VectorField],
        rhs: &VectorField,
    ) -> Result<Vec<RationalExpr>, FrameError> {
        let rows: Vec<Vec<RationalExpr>> = (0..dim)
            .map(|r| cols.iter().map(|c| c.components[r].clone()).collect())
            .collect();
        let mat = SymMatrix::from_rows(dim, rows);
        let b: Vec<RationalExpr> = (0..dim).map(|r| rhs.components[r].clone()).collect();
        Ok(mat.solve(&b)?)
    }

    /// Affine normalization of a vertical candidate: solves for the unique
    /// g0, g1, g2 correction making the three invariants vanish, on the
    /// requested sign branch.
    pub fn normalize(
        &self,
        candidate: &ScaledField,
        branch: SignBranch,
    ) -> Result<NormalizedSection, FrameError> {
        let base = match branch {
            SignBranch::Plus => candidate.clone(),
            SignBranch::Minus => candidate.neg(),
        };
        let chain = self.chain(&base)?;
        let kappa = self.kappas(&chain)?;
        let m = self.m as i64;

        let mu2 = kappa[1].scale(&Rat::new((-1).into(), (6 * m - 9).into()));
        let mu1 = kappa[0].sub(&kappa[2]).scale(&Rat::new((-1).into(), 4.into()));
        let mu0 = kappa[0].add(&mu1.scale(&Rat::from_integer((2 * m - 3).into())));

        let mut field = base.field.clone();
        for (mu, g) in [(&mu0, &self.g0), (&mu1, &self.g1), (&mu2, &self.g2)] {
            if !mu.is_zero() {
                field = field.add(&g.scale_expr(mu))?;
            }
        }
        let epsilon1 = ScaledField { scale: base.field_scale(), field };
        let residual = self.kappas(&self.chain(&epsilon1)?)?;
        Ok(NormalizedSection { epsilon1, mu: [mu0, mu1, mu2], kappa, residual })
    }

    /// The full frame h, g0, g1, g2, eps_1..eps_{2m}, eta built from a
    /// vertical generator; 2n - 1 fields.
    pub fn full_frame(&self, eps1: &ScaledField) -> Result<Vec<ScaledField>, FrameError> {
        let chain = self.chain(eps1)?;
        let eta = self.eta(&chain)?;
        let mut fields = vec![
            ScaledField::plain(self.h.clone()),
            ScaledField::plain(self.g0.clone()),
            ScaledField::plain(self.g1.clone()),
            ScaledField::plain(self.g2.clone()),
        ];
        fields.extend(chain);
        fields.push(eta);
        Ok(fields)
    }

    /// Pullback of the symplectic pairing of eps_{m+1} and eps_m at a
    /// rational point of the extended chart; equals one for the orientation
    /// fixed by the construction.
    pub fn pairing_value(
        &self,
        fc: &FlagComputer,
        chain: &[ScaledField],
        point: &[Rat],
    ) -> Result<Rat, FrameError> {
        let n = self.n;
        let lambda: Vec<Rat> = point[..2 * n].to_vec();
        let sigma = fc.sigma_at(&lambda)?;
        let vm = chain[self.m].field.evaluate(point)?;
        let wm = chain[self.m - 1].field.evaluate(point)?;
        let a_indices: Vec<usize> = (0..n).chain((n + 3)..(2 * n)).collect();
        let mut raw = Rat::zero();
        for (i, &fi) in a_indices.iter().enumerate() {
            for (j, &fj) in a_indices.iter().enumerate() {
                let s = sigma.at(i, j);
                if !s.is_zero() {
                    raw += s * &vm[fi] * &wm[fj];
                }
            }
        }
        // multiply by the product of the two scale factors, which is an
        // exact rational since the half-powers pair up
        let mut tags: Vec<(RationalExpr, i32)> = Vec::new();
        for (base, half) in chain[self.m].field_scale().iter().chain(chain[self.m - 1].field_scale().iter()) {
            match tags.iter_mut().find(|(b2, _)| b2 == base) {
                Some(entry) => entry.1 += half,
                None => tags.push((base.clone(), *half)),
            }
        }
        let mut factor = Rat::one();
        for (base, half) in tags {
            if half % 2 != 0 {
                return Err(FrameError::Degenerate("pairing scale does not square".into()));
            }
            let v = base.evaluate(point)?.abs();
            if v.is_zero() {
                return Err(FrameError::Degenerate("scale base vanishes at the point".into()));
            }
            let p = half / 2;
            let powed = if p >= 0 {
                num::pow::pow(v, p as usize)
            } else {
                num::pow::pow(v, (-p) as usize).recip()
            };
            factor *= powed;
        }
        Ok(raw * factor)
    }
}

/// rho = m (4 m^2 - 1) / 3 as an exact rational.
fn rho_rat(m: usize) -> Rat {
    let m = m as i64;
    Rat::new((m * (4 * m * m - 1)).into(), 3.into())
}

/// A rational expression together with the polynomial derivatives of its
/// numerator and denominator, so partial derivatives can be evaluated at a
/// numeric point without any symbolic simplification.
#[derive(Debug, Clone)]
struct DiffExpr {
    num: Poly,
    den: Poly,
    dnum: Vec<Poly>,
    dden: Vec<Poly>,
}

impl DiffExpr {
    fn new(e: &RationalExpr) -> Self {
        let num = e.numerator().clone();
        let den = e.denominator().clone();
        let dnum = (0..num.nvars).map(|v| num.differentiate(v)).collect();
        let dden = (0..den.nvars).map(|v| den.differentiate(v)).collect();
        DiffExpr { num, den, dnum, dden }
    }

    fn value(&self, point: &[f64]) -> f64 {
        self.num.evaluate_f64(point) / self.den.evaluate_f64(point)
    }

    fn partial(&self, var: usize, point: &[f64]) -> f64 {
        let d = self.den.evaluate_f64(point);
        if self.dden[var].is_zero() {
            return self.dnum[var].evaluate_f64(point) / d;
        }
        let n = self.num.evaluate_f64(point);
        (self.dnum[var].evaluate_f64(point) * d - n * self.dden[var].evaluate_f64(point)) / (d * d)
    }
}

/// All pairwise brackets of a frame, evaluated numerically point by point.
/// Symbolic bracket expansion of a full frame swells badly; here each
/// bracket value is assembled from precomputed component derivatives, with
/// the scale factors contributing their logarithmic derivatives.
#[derive(Debug, Clone)]
pub struct StructureTable {
    pub fields: Vec<ScaledField>,
    comps: Vec<Vec<DiffExpr>>,
    scales: Vec<Vec<(DiffExpr, i32)>>,
}

impl StructureTable {
    pub fn new(fields: Vec<ScaledField>) -> Result<Self, FrameError> {
        let comps = fields
            .iter()
            .map(|f| f.field.components.iter().map(DiffExpr::new).collect())
            .collect();
        let scales = fields
            .iter()
            .map(|f| f.scale.iter().map(|(base, half)| (DiffExpr::new(base), *half)).collect())
            .collect();
        Ok(StructureTable { fields, comps, scales })
    }

    /// Structure coefficients at a numeric point: `out[i][j]` decomposes
    /// [f_i, f_j] in the frame. `None` when a field fails to evaluate or a
    /// bracket leaves the numeric span of the frame.
    pub fn at(&self, point: &[f64]) -> Option<Vec<Vec<Vec<f64>>>> {
        let k = self.fields.len();
        let dim = point.len();

        // per-field data: rational part values, Jacobian of the rational
        // part, and the scale factor value
        let mut vals = Vec::with_capacity(k);
        let mut jacs = Vec::with_capacity(k);
        let mut sval = Vec::with_capacity(k);
        for f in 0..k {
            let v: Vec<f64> = self.comps[f].iter().map(|c| c.value(point)).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return None;
            }
            let jac: Vec<Vec<f64>> = self.comps[f]
                .iter()
                .map(|c| (0..dim).map(|i| c.partial(i, point)).collect())
                .collect();
            if jac.iter().flatten().any(|x| !x.is_finite()) {
                return None;
            }
            let mut s = 1.0_f64;
            for (base, half) in &self.scales[f] {
                let b = base.value(point).abs();
                if !b.is_finite() || b == 0.0 {
                    return None;
                }
                s *= b.powf(*half as f64 / 2.0);
            }
            vals.push(v);
            jacs.push(jac);
            sval.push(s);
        }

        let cols: Vec<Vec<f64>> = (0..k)
            .map(|f| vals[f].iter().map(|v| v * sval[f]).collect())
            .collect();

        // directional log-derivative of field y's scale along field x
        let log_along = |x: usize, y: usize| -> f64 {
            let mut acc = 0.0;
            for (base, half) in &self.scales[y] {
                let db: f64 = (0..dim).map(|i| vals[x][i] * base.partial(i, point)).sum();
                acc += (*half as f64 / 2.0) * db / base.value(point);
            }
            acc
        };

        let mut out = vec![vec![vec![0.0; k]; k]; k];
        for i in 0..k {
            for j in (i + 1)..k {
                let lij = log_along(i, j);
                let lji = log_along(j, i);
                let mut rhs = vec![0.0; dim];
                for c in 0..dim {
                    let mut w = 0.0;
                    for v in 0..dim {
                        w += vals[i][v] * jacs[j][c][v] - vals[j][v] * jacs[i][c][v];
                    }
                    w += lij * vals[j][c] - lji * vals[i][c];
                    rhs[c] = sval[i] * sval[j] * w;
                }
                if rhs.iter().any(|x| !x.is_finite()) {
                    return None;
                }
                let sol = solve_f64(&cols, &rhs)?;
                for (c, v) in sol.iter().enumerate() {
                    out[i][j][c] = *v;
                    out[j][i][c] = -*v;
                }
            }
        }
        Some(out)
    }
}

/// The structure coefficients of the frame of the maximally symmetric
/// model, in the order h, g0, g1, g2, eps_1..eps_{2m}, eta.
pub fn flat_structure_constants(m: usize) -> Vec<Vec<Vec<f64>>> {
    let k = 2 * m + 5;
    let e = |i: usize| 3 + i; // index of eps_i, 1 <= i <= 2m
    let eta = k - 1;
    let mut out = vec![vec![vec![0.0; k]; k]; k];
    let set = |out: &mut Vec<Vec<Vec<f64>>>, i: usize, j: usize, c: usize, v: f64| {
        out[i][j][c] = v;
        out[j][i][c] = -v;
    };
    // gl(2) block
    set(&mut out, 0, 2, 0, 2.0); // [h, g1] = 2h
    set(&mut out, 0, 3, 2, -1.0); // [h, g2] = -g1
    set(&mut out, 2, 3, 3, 2.0); // [g1, g2] = 2 g2
    for i in 1..=2 * m {
        let w = (2 * m) as f64 - 2.0 * i as f64 + 1.0;
        set(&mut out, 2, e(i), e(i), w); // [g1, eps_i]
        let c = ((i - 1) * (2 * m - i + 1)) as f64;
        if i > 1 {
            set(&mut out, 3, e(i), e(i - 1), c); // [g2, eps_i]
        }
        set(&mut out, 1, e(i), e(i), -1.0); // [g0, eps_i]
        if i < 2 * m {
            set(&mut out, 0, e(i), e(i + 1), 1.0); // [h, eps_i]
        }
    }
    set(&mut out, 1, eta, eta, -2.0); // [g0, eta]
    for i in 1..=2 * m {
        for j in (i + 1)..=2 * m {
            if i + j == 2 * m + 1 {
                let s = if i % 2 == 1 { 1.0 } else { -1.0 };
                set(&mut out, e(i), e(j), eta, s);
            }
        }
    }
    out
}

/// Seeded sampling of numeric points where every frame field evaluates.
pub fn sample_points(
    frame: &SigmaFrame,
    fields: &[ScaledField],
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>, FrameError> {
    let n = frame.n;
    let dim = 2 * n + 2;
    let base: Vec<f64> = frame
        .base_point
        .iter()
        .map(|r| r.to_f64().ok_or_else(|| FrameError::Sampling("base point overflow".into())))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 200 * count {
            return Err(FrameError::Sampling(format!(
                "no admissible points after {attempts} attempts"
            )));
        }
        let mut p = vec![0.0; dim];
        for i in 0..n {
            p[i] = base[i] + rng.gen_range(-0.3..0.3);
        }
        for i in (n + 3)..(2 * n) {
            p[i] = base[i] + rng.gen_range(-0.3..0.3);
        }
        p[2 * n] = rng.gen_range(0.6..2.0);
        p[2 * n + 1] = rng.gen_range(-0.8..0.8);
        if fields.iter().all(|f| f.evaluate_f64(&p).is_some()) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Outcome of the maximal-symmetry test.
#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub maximally_symmetric: bool,
    /// Largest absolute deviation of a structure coefficient from the
    /// constants of the maximally symmetric model, over all sample points.
    pub max_deviation: f64,
    pub points_used: usize,
    pub tolerance: f64,
}

/// Build the normalized frame at `lambda` and compare its structure
/// coefficients against the constants of the maximally symmetric model at
/// seeded sample points.
pub fn detect_max_symmetry(
    ct: &CotangentChart,
    lambda: &[Rat],
    seed: u64,
    points: usize,
    tolerance: f64,
) -> Result<SymmetryReport, FrameError> {
    let frame = SigmaFrame::new(ct, lambda)?;
    let normalized = frame.normalize(&frame.epsilon1, SignBranch::Plus)?;
    let fields = frame.full_frame(&normalized.epsilon1)?;
    let table = StructureTable::new(fields)?;
    let sample = sample_points(&frame, &table.fields, seed, points)?;
    let expected = flat_structure_constants(frame.m);
    let mut max_dev: f64 = 0.0;
    let mut used = 0usize;
    for p in &sample {
        let Some(coeffs) = table.at(p) else { continue };
        used += 1;
        let k = table.fields.len();
        for i in 0..k {
            for j in 0..k {
                for c in 0..k {
                    let d = (coeffs[i][j][c] - expected[i][j][c]).abs();
                    if d > max_dev {
                        max_dev = d;
                    }
                }
            }
        }
    }
    if used == 0 {
        return Err(FrameError::Sampling("no sample point admitted a decomposition".into()));
    }
    Ok(SymmetryReport {
        maximally_symmetric: max_dev < tolerance,
        max_deviation: max_dev,
        points_used: used,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_ode, from_ode_text, lie_bracket};
    use crate::symca::{rat, rat_int};

    fn flat_setup(n: usize) -> (CotangentChart, Vec<Rat>) {
        let d = flat_ode(n).unwrap();
        let q: Vec<Rat> = (0..n).map(|i| rat(i as i64 + 1, 2)).collect();
        let ct = CotangentChart::new(&d, &q).unwrap();
        let mut lam = vec![rat_int(0); 2 * n];
        for i in 0..n {
            lam[i] = q[i].clone();
        }
        lam[n + 3] = rat_int(2);
        for i in 5..=n {
            lam[n + i - 1] = rat(1, i as i64 + 1);
        }
        (ct, lam)
    }

    #[test]
    fn rejects_low_dimension() {
        let d = flat_ode(5).unwrap();
        let q: Vec<Rat> = (0..5).map(|i| rat(i as i64 + 1, 2)).collect();
        let ct = CotangentChart::new(&d, &q).unwrap();
        let mut lam = vec![rat_int(0); 10];
        for i in 0..5 {
            lam[i] = q[i].clone();
        }
        lam[5 + 3] = rat_int(2);
        match SigmaFrame::new(&ct, &lam) {
            Err(FrameError::LowDimension(5)) => {}
            other => panic!("expected LowDimension, got {other:?}"),
        }
    }

    #[test]
    fn flat_curvature_vanishes() {
        let (ct, lam) = flat_setup(6);
        let frame = SigmaFrame::new(&ct, &lam).unwrap();
        assert!(frame.b_flow.is_zero());
    }

    #[test]
    fn gl2_relations_hold() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let two = Rat::from_integer(2.into());
        // [g1, h] = -2h, [g2, h] = g1, [g0, h] = 0, [g1, g2] = 2 g2
        let b = lie_bracket(&f.g1, &f.h).unwrap();
        assert_eq!(b, f.h.scale(&two).neg());
        let b = lie_bracket(&f.g2, &f.h).unwrap();
        assert_eq!(b, f.g1);
        let b = lie_bracket(&f.g0, &f.h).unwrap();
        assert!(b.is_zero());
        let b = lie_bracket(&f.g1, &f.g2).unwrap();
        assert_eq!(b, f.g2.scale(&two));
        assert!(lie_bracket(&f.g0, &f.g1).unwrap().is_zero());
        assert!(lie_bracket(&f.g0, &f.g2).unwrap().is_zero());
    }

    #[test]
    fn flat_chain_invariants_vanish() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let chain = f.chain(&f.epsilon1).unwrap();
        assert_eq!(chain.len(), 6);
        let kappa = f.kappas(&chain).unwrap();
        for k in &kappa {
            assert!(k.is_zero(), "nonzero invariant {k:?}");
        }
        // canonical candidate is already normalized: correction is zero
        let norm = f.normalize(&f.epsilon1, SignBranch::Plus).unwrap();
        for mu in &norm.mu {
            assert!(mu.is_zero());
        }
        assert_eq!(norm.epsilon1.field, f.epsilon1.field);
    }

    #[test]
    fn flat_chain_terminates() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let chain = f.chain(&f.epsilon1).unwrap();
        // [h, eps_{2m}] vanishes on the maximally symmetric model
        let h = ScaledField::plain(f.h.clone());
        let top = h.bracket(&chain[2 * f.m - 1]).unwrap();
        assert!(top.field.is_zero());
    }

    #[test]
    fn normalization_corrects_perturbed_candidates() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let mut field = f.epsilon1.field.clone();
        field = field.add(&f.g0.scale(&rat(1, 2))).unwrap();
        field = field.add(&f.g1.scale(&rat(-1, 3))).unwrap();
        field = field.add(&f.g2.scale(&rat(1, 5))).unwrap();
        let candidate = ScaledField { scale: f.epsilon1.field_scale(), field };
        let norm = f.normalize(&candidate, SignBranch::Plus).unwrap();
        for r in &norm.residual {
            assert!(r.is_zero(), "normalization left residual {r:?}");
        }
        assert_eq!(norm.epsilon1.field, f.epsilon1.field);
        assert_eq!(norm.mu[0], RationalExpr::constant(f.chart.dimension(), rat(-1, 2)));
        assert_eq!(norm.mu[1], RationalExpr::constant(f.chart.dimension(), rat(1, 3)));
        assert_eq!(norm.mu[2], RationalExpr::constant(f.chart.dimension(), rat(-1, 5)));
    }

    #[test]
    fn sign_branches_are_exact_reflections() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let mut field = f.epsilon1.field.clone();
        field = field.add(&f.g1.scale(&rat(2, 7))).unwrap();
        let candidate = ScaledField { scale: f.epsilon1.field_scale(), field };
        let plus = f.normalize(&candidate, SignBranch::Plus).unwrap();
        let minus = f.normalize(&candidate, SignBranch::Minus).unwrap();
        assert_eq!(minus.epsilon1.field, plus.epsilon1.field.neg());
        for (a, b) in plus.mu.iter().zip(minus.mu.iter()) {
            assert_eq!(b, &a.neg());
        }
    }

    #[test]
    fn flat_structure_matches_model_constants() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let fields = f.full_frame(&f.epsilon1).unwrap();
        assert_eq!(fields.len(), 2 * ct.n() - 1);
        let table = StructureTable::new(fields).unwrap();
        let expected = flat_structure_constants(f.m);
        let pts = sample_points(&f, &table.fields, 11, 3).unwrap();
        for p in &pts {
            let coeffs = table.at(p).expect("decomposition");
            let k = table.fields.len();
            for i in 0..k {
                for j in 0..k {
                    for c in 0..k {
                        assert!(
                            (coeffs[i][j][c] - expected[i][j][c]).abs() < 1e-8,
                            "entry [{i}][{j}][{c}] = {} expected {}",
                            coeffs[i][j][c],
                            expected[i][j][c]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pairing_is_unit_on_flat_model() {
        let (ct, lam) = flat_setup(6);
        let f = SigmaFrame::new(&ct, &lam).unwrap();
        let fc = FlagComputer::new(&ct).unwrap();
        let chain = f.chain(&f.epsilon1).unwrap();
        let v = f.pairing_value(&fc, &chain, &f.base_point).unwrap();
        assert_eq!(v.abs(), Rat::one());
    }

    #[test]
    fn flat_model_detected_as_maximally_symmetric() {
        let (ct, lam) = flat_setup(6);
        let report = detect_max_symmetry(&ct, &lam, 7, 5, 1e-8).unwrap();
        assert!(report.maximally_symmetric, "deviation {}", report.max_deviation);
    }

    #[test]
    fn perturbed_model_is_not_maximally_symmetric() {
        let d = from_ode_text(6, "1/2*p3^2 + 1/10*p0*p3^3").unwrap();
        let q: Vec<Rat> = vec![rat_int(0), rat_int(1), rat_int(-1), rat_int(0), rat_int(1), rat_int(0)];
        let ct = CotangentChart::new(&d, &q).unwrap();
        let n = 6;
        let mut lam = vec![rat_int(0); 2 * n];
        for i in 0..n {
            lam[i] = q[i].clone();
        }
        lam[n + 3] = rat_int(3);
        lam[n + 4] = rat(1, 4);
        lam[n + 5] = rat(-1, 5);
        let report = detect_max_symmetry(&ct, &lam, 7, 5, 1e-8).unwrap();
        assert!(!report.maximally_symmetric);
        assert!(report.max_deviation > 1e-4, "deviation {}", report.max_deviation);
    }
}
