//! Vector fields on a chart, Lie brackets, and distribution growth.
//!
//! A rank 2 distribution is given by a pair of generating vector fields
//! with rational-expression components. Distributions may also be built
//! from an underdetermined ODE z'(x) = F(x, y, y', ..., y^(n-3), z) with
//! y^(i) written as p_i, which yields the standard pair of generators on
//! the chart (x, p_0, ..., p_{n-3}, z).

use num::{BigRational, One};
use thiserror::Error;

use crate::linalg::QMatrix;
use crate::symca::{parse_expr, Coordinate, ParseError, Rat, RationalExpr, SymcaError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("vector fields live on different charts")]
    ChartMismatch,
    #[error("expression error: {0}")]
    Symbolic(#[from] SymcaError),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("resource limit exceeded: {what} reached {size} (limit {limit})")]
    ResourceLimit { what: &'static str, size: usize, limit: usize },
    #[error("degenerate point: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Invalid(String),
}

/// Ordered coordinate system on an open subset of R^n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    coords: Vec<Coordinate>,
}

impl Chart {
    pub fn new(names: &[&str]) -> Result<Self, GeometryError> {
        Self::from_names(names.iter().map(|s| s.to_string()).collect())
    }

    pub fn from_names(names: Vec<String>) -> Result<Self, GeometryError> {
        if names.len() < 3 {
            return Err(GeometryError::Invalid(format!(
                "chart needs at least 3 coordinates, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(GeometryError::Invalid(format!("duplicate coordinate '{n}'")));
            }
        }
        Ok(Chart {
            coords: names
                .into_iter()
                .enumerate()
                .map(|(index, name)| Coordinate::new(name, index))
                .collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }

    pub fn coordinates(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn parse(&self, text: &str) -> Result<RationalExpr, GeometryError> {
        Ok(parse_expr(text, &self.names())?)
    }

    pub fn var(&self, index: usize) -> RationalExpr {
        RationalExpr::var(self.dimension(), index)
    }
}

/// Vector field with one rational-expression component per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub chart: Chart,
    pub components: Vec<RationalExpr>,
}

impl VectorField {
    pub fn zero(chart: &Chart) -> Self {
        let n = chart.dimension();
        VectorField { chart: chart.clone(), components: vec![RationalExpr::zero(n); n] }
    }

    /// Coordinate field for the given coordinate index.
    pub fn basis(chart: &Chart, index: usize) -> Self {
        let mut f = Self::zero(chart);
        f.components[index] = RationalExpr::one(chart.dimension());
        f
    }

    pub fn from_components(chart: &Chart, components: Vec<RationalExpr>) -> Result<Self, GeometryError> {
        if components.len() != chart.dimension() {
            return Err(GeometryError::Invalid(format!(
                "{} components for a {}-dimensional chart",
                components.len(),
                chart.dimension()
            )));
        }
        Ok(VectorField { chart: chart.clone(), components })
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn num_terms(&self) -> usize {
        self.components.iter().map(|c| c.num_terms()).sum()
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, GeometryError> {
        if self.chart != other.chart {
            return Err(GeometryError::ChartMismatch);
        }
        Ok(VectorField {
            chart: self.chart.clone(),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    pub fn scale_expr(&self, f: &RationalExpr) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            components: self.components.iter().map(|c| c.mul(f)).collect(),
        }
    }

    pub fn scale(&self, c: &Rat) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            components: self.components.iter().map(|x| x.scale(c)).collect(),
        }
    }

    pub fn neg(&self) -> VectorField {
        self.scale(&-BigRational::one())
    }

    /// Directional derivative X(f).
    pub fn apply(&self, f: &RationalExpr) -> RationalExpr {
        let n = self.chart.dimension();
        let mut acc = RationalExpr::zero(n);
        for (j, comp) in self.components.iter().enumerate() {
            if !comp.is_zero() {
                let df = f.differentiate(j);
                if !df.is_zero() {
                    acc = acc.add(&comp.mul(&df));
                }
            }
        }
        acc
    }

    pub fn evaluate(&self, point: &[Rat]) -> Result<Vec<Rat>, SymcaError> {
        self.components.iter().map(|c| c.evaluate(point)).collect()
    }

    pub fn evaluate_f64(&self, point: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.evaluate_f64(point)).collect()
    }
}

/// [X,Y]^k = X(Y^k) - Y(X^k).
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, GeometryError> {
    if x.chart != y.chart {
        return Err(GeometryError::ChartMismatch);
    }
    let components = y
        .components
        .iter()
        .zip(&x.components)
        .map(|(yk, xk)| x.apply(yk).sub(&y.apply(xk)))
        .collect();
    Ok(VectorField { chart: x.chart.clone(), components })
}

/// (ad H)^k Y by iterated bracket, aborting when the intermediate fields
/// exceed `term_limit` terms in total.
pub fn ad_power(
    h: &VectorField,
    y: &VectorField,
    k: usize,
    term_limit: usize,
) -> Result<VectorField, GeometryError> {
    let mut acc = y.clone();
    for _ in 0..k {
        acc = lie_bracket(h, &acc)?;
        let size = acc.num_terms();
        if size > term_limit {
            return Err(GeometryError::ResourceLimit { what: "bracket terms", size, limit: term_limit });
        }
    }
    Ok(acc)
}

/// Rank 2 distribution given by two generating fields.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub chart: Chart,
    pub x1: VectorField,
    pub x2: VectorField,
    /// Set when the distribution came from an ODE: (n, F).
    pub ode: Option<(usize, RationalExpr)>,
}

impl DistributionSpec {
    pub fn from_fields(x1: VectorField, x2: VectorField) -> Result<Self, GeometryError> {
        if x1.chart != x2.chart {
            return Err(GeometryError::ChartMismatch);
        }
        Ok(DistributionSpec { chart: x1.chart.clone(), x1, x2, ode: None })
    }
}

/// Chart (x, p_0, ..., p_{n-3}, z) used by the ODE presentation.
pub fn ode_chart(n: usize) -> Result<Chart, GeometryError> {
    if n < 4 {
        return Err(GeometryError::Invalid(format!("ODE presentation needs n >= 4, got {n}")));
    }
    let mut names = vec!["x".to_string()];
    for i in 0..=(n - 3) {
        names.push(format!("p{i}"));
    }
    names.push("z".to_string());
    Chart::from_names(names)
}

/// Distribution annihilating dp_i - p_{i+1} dx (i < n-3) and dz - F dx.
pub fn from_ode(n: usize, f: RationalExpr) -> Result<DistributionSpec, GeometryError> {
    let chart = ode_chart(n)?;
    let dim = chart.dimension();
    if f.nvars() != dim {
        return Err(GeometryError::Invalid(format!(
            "F has {} variables, chart has {dim}",
            f.nvars()
        )));
    }
    // X1 = d/dp_{n-3}
    let top = chart.index_of(&format!("p{}", n - 3)).unwrap();
    let x1 = VectorField::basis(&chart, top);
    // X2 = d/dx + sum p_{i+1} d/dp_i + F d/dz
    let mut comps = vec![RationalExpr::zero(dim); dim];
    comps[chart.index_of("x").unwrap()] = RationalExpr::one(dim);
    for i in 0..=(n - 4) {
        let target = chart.index_of(&format!("p{i}")).unwrap();
        let source = chart.index_of(&format!("p{}", i + 1)).unwrap();
        comps[target] = chart.var(source);
    }
    comps[chart.index_of("z").unwrap()] = f.clone();
    let x2 = VectorField { chart: chart.clone(), components: comps };
    Ok(DistributionSpec { chart, x1, x2, ode: Some((n, f)) })
}

/// From an expression in the names x, p0, ..., p_{n-3}, z.
pub fn from_ode_text(n: usize, f_text: &str) -> Result<DistributionSpec, GeometryError> {
    let chart = ode_chart(n)?;
    let f = chart.parse(f_text)?;
    from_ode(n, f)
}

/// Maximally symmetric ODE model: F = p_{n-3}^2 / 2.
pub fn flat_ode(n: usize) -> Result<DistributionSpec, GeometryError> {
    let chart = ode_chart(n)?;
    let top = chart.var(chart.index_of(&format!("p{}", n - 3)).unwrap());
    from_ode(n, top.mul(&top).scale(&num::BigRational::new(1.into(), 2.into())))
}

/// One-form with one component per coordinate; pairs with vector fields.
#[derive(Debug, Clone, PartialEq)]
pub struct OneForm {
    pub chart: Chart,
    pub components: Vec<RationalExpr>,
}

impl OneForm {
    pub fn pair(&self, x: &VectorField) -> Result<RationalExpr, GeometryError> {
        if self.chart != x.chart {
            return Err(GeometryError::ChartMismatch);
        }
        let n = self.chart.dimension();
        let mut acc = RationalExpr::zero(n);
        for (a, b) in self.components.iter().zip(&x.components) {
            acc = acc.add(&a.mul(b));
        }
        Ok(acc)
    }
}

/// The n-2 forms dp_i - p_{i+1} dx (i = 0..n-4) and dz - F dx whose common
/// kernel is the ODE distribution.
pub fn pfaffian_forms(d: &DistributionSpec) -> Result<Vec<OneForm>, GeometryError> {
    let Some((n, ref f)) = d.ode else {
        return Err(GeometryError::Invalid("distribution was not built from an ODE".into()));
    };
    let chart = &d.chart;
    let dim = chart.dimension();
    let xi = chart.index_of("x").unwrap();
    let mut forms = Vec::new();
    for i in 0..=(n - 4) {
        let mut comps = vec![RationalExpr::zero(dim); dim];
        comps[chart.index_of(&format!("p{i}")).unwrap()] = RationalExpr::one(dim);
        comps[xi] = chart.var(chart.index_of(&format!("p{}", i + 1)).unwrap()).neg();
        forms.push(OneForm { chart: chart.clone(), components: comps });
    }
    let mut comps = vec![RationalExpr::zero(dim); dim];
    comps[chart.index_of("z").unwrap()] = RationalExpr::one(dim);
    comps[xi] = f.neg();
    forms.push(OneForm { chart: chart.clone(), components: comps });
    Ok(forms)
}

/// Fields spanning D^1 in D^2 in ... up to `depth` brackets, with the word
/// length at which each field first appears. Deduplicates fields that are
/// already present in canonical form.
fn bracket_spanning_family(
    d: &DistributionSpec,
    depth: usize,
    term_limit: usize,
) -> Result<Vec<(usize, VectorField)>, GeometryError> {
    let mut family: Vec<(usize, VectorField)> = vec![(1, d.x1.clone()), (1, d.x2.clone())];
    let generators = [d.x1.clone(), d.x2.clone()];
    let mut frontier: Vec<VectorField> = generators.to_vec();
    for level in 2..=depth {
        let mut next = Vec::new();
        for w in &frontier {
            for g in &generators {
                let b = lie_bracket(g, w)?;
                let size = b.num_terms();
                if size > term_limit {
                    return Err(GeometryError::ResourceLimit {
                        what: "bracket terms",
                        size,
                        limit: term_limit,
                    });
                }
                if b.is_zero() || family.iter().any(|(_, f)| *f == b || *f == b.neg()) {
                    continue;
                }
                family.push((level, b.clone()));
                next.push(b);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(family)
}

const GROWTH_TERM_LIMIT: usize = 20_000;

/// Dimensions (dim D^1(q), dim D^2(q), ...) of the bracket-generated flag
/// at the rational point `q`, stopping at `depth` or once the chart
/// dimension is reached.
pub fn small_growth_vector(
    d: &DistributionSpec,
    q: &[Rat],
    depth: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = d.chart.dimension();
    if q.len() != n {
        return Err(GeometryError::Invalid(format!(
            "point has {} coordinates, chart has {n}",
            q.len()
        )));
    }
    let family = bracket_spanning_family(d, depth, GROWTH_TERM_LIMIT)?;
    let mut evaluated: Vec<(usize, Vec<Rat>)> = Vec::with_capacity(family.len());
    for (level, f) in &family {
        evaluated.push((*level, f.evaluate(q).map_err(GeometryError::Symbolic)?));
    }
    let gen_rank = QMatrix::from_rows(
        evaluated.iter().filter(|(l, _)| *l == 1).map(|(_, v)| v.clone()).collect(),
    )
    .rank();
    if gen_rank < 2 {
        return Err(GeometryError::Degenerate(format!(
            "generators have rank {gen_rank} at the given point"
        )));
    }
    let mut out = Vec::new();
    for j in 1..=depth {
        let rows: Vec<Vec<Rat>> = evaluated
            .iter()
            .filter(|(l, _)| *l <= j)
            .map(|(_, v)| v.clone())
            .collect();
        let rank = QMatrix::from_rows(rows).rank();
        out.push(rank);
        if rank == n {
            break;
        }
        // stationary flag stays stationary
        if j >= 2 && out[j - 2] == rank && family.iter().all(|(l, _)| *l <= j) {
            break;
        }
    }
    Ok(out)
}

/// Brute-force oracle for the growth vector: evaluates every bracket word
/// up to `depth` letters (not just words extended one generator at a time)
/// and takes exact ranks. Exponential; use only for cross-checks in low
/// dimension.
pub fn growth_vector_all_words(
    d: &DistributionSpec,
    q: &[Rat],
    depth: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = d.chart.dimension();
    // words_by_len[k] = all bracket words with k+1 letters
    let mut words_by_len: Vec<Vec<VectorField>> = vec![vec![d.x1.clone(), d.x2.clone()]];
    for len in 2..=depth {
        let mut level = Vec::new();
        for left_len in 1..len {
            let right_len = len - left_len;
            for a in &words_by_len[left_len - 1] {
                for b in &words_by_len[right_len - 1] {
                    let w = lie_bracket(a, b)?;
                    if !w.is_zero() {
                        level.push(w);
                    }
                }
            }
        }
        words_by_len.push(level);
    }
    let mut out = Vec::new();
    let mut rows: Vec<Vec<Rat>> = Vec::new();
    for (k, level) in words_by_len.iter().enumerate() {
        for w in level {
            rows.push(w.evaluate(q).map_err(GeometryError::Symbolic)?);
        }
        let rank = QMatrix::from_rows(rows.clone()).rank();
        if k == 0 && rank < 2 {
            return Err(GeometryError::Degenerate(format!(
                "generators have rank {rank} at the given point"
            )));
        }
        out.push(rank);
        if rank == n {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symca::{rat, rat_int};

    fn generic_point(n: usize) -> Vec<Rat> {
        (0..n).map(|i| rat(2 * i as i64 + 1, 3)).collect()
    }

    #[test]
    fn constant_fields_commute() {
        let chart = Chart::new(&["x", "p0", "z"]).unwrap();
        let dx = VectorField::basis(&chart, 0);
        let dp = VectorField::basis(&chart, 1);
        assert!(lie_bracket(&dx, &dp).unwrap().is_zero());
    }

    #[test]
    fn flat_model_first_brackets() {
        // n = m + 3, top derivative p_m
        let n = 6;
        let d = flat_ode(n).unwrap();
        let chart = &d.chart;
        let x3 = lie_bracket(&d.x1, &d.x2).unwrap();
        // [X1, X2] = d/dp_{m-1} + p_m d/dz
        let mut expect = VectorField::basis(chart, chart.index_of("p2").unwrap());
        expect.components[chart.index_of("z").unwrap()] =
            chart.var(chart.index_of("p3").unwrap());
        assert_eq!(x3, expect);
        // [X2, X3] = -d/dp_{m-2}
        let x5 = lie_bracket(&d.x2, &x3).unwrap();
        let expect = VectorField::basis(chart, chart.index_of("p1").unwrap()).neg();
        assert_eq!(x5, expect);
    }

    #[test]
    fn flat_model_ad_chain() {
        // (ad X2)^{i-5} X5 = (-1)^i d/dp_{m+3-i} for 6 <= i <= m+3
        let n = 7; // m = 4
        let d = flat_ode(n).unwrap();
        let chart = &d.chart;
        let x3 = lie_bracket(&d.x1, &d.x2).unwrap();
        let x5 = lie_bracket(&d.x2, &x3).unwrap();
        for i in 6..=n {
            let xi = ad_power(&d.x2, &x5, i - 5, 10_000).unwrap();
            let idx = chart.index_of(&format!("p{}", n - i)).unwrap();
            let mut expect = VectorField::basis(chart, idx);
            if i % 2 == 1 {
                expect = expect.neg();
            }
            assert_eq!(xi, expect);
        }
    }

    #[test]
    fn ad_power_of_polynomial_field() {
        // (ad d/dx)^2 (x^2 d/dz) = 2 d/dz
        let chart = Chart::new(&["x", "y", "z"]).unwrap();
        let dx = VectorField::basis(&chart, 0);
        let mut f = VectorField::zero(&chart);
        f.components[2] = chart.var(0).mul(&chart.var(0));
        let r = ad_power(&dx, &f, 2, 1000).unwrap();
        let expect = VectorField::basis(&chart, 2).scale(&rat_int(2));
        assert_eq!(r, expect);
    }

    #[test]
    fn jacobi_identity_on_random_fields() {
        use rand::{Rng, SeedableRng};
        let chart = Chart::new(&["x", "y", "z"]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut random_field = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut f = VectorField::zero(&chart);
            for c in 0..3 {
                // random polynomial of degree <= 2
                let mut e = RationalExpr::zero(3);
                for v in 0..3 {
                    let a: i64 = rng.gen_range(-3..=3);
                    let b: i64 = rng.gen_range(-2..=2);
                    e = e.add(&chart.var(v).scale(&rat_int(a)));
                    e = e.add(&chart.var(v).mul(&chart.var((v + 1) % 3)).scale(&rat_int(b)));
                }
                f.components[c] = e;
            }
            f
        };
        for _ in 0..5 {
            let x = random_field(&mut rng);
            let y = random_field(&mut rng);
            let z = random_field(&mut rng);
            // antisymmetry
            let s = lie_bracket(&x, &y).unwrap().add(&lie_bracket(&y, &x).unwrap()).unwrap();
            assert!(s.is_zero());
            // Jacobi
            let a = lie_bracket(&lie_bracket(&x, &y).unwrap(), &z).unwrap();
            let b = lie_bracket(&lie_bracket(&y, &z).unwrap(), &x).unwrap();
            let c = lie_bracket(&lie_bracket(&z, &x).unwrap(), &y).unwrap();
            assert!(a.add(&b).unwrap().add(&c).unwrap().is_zero());
        }
    }

    #[test]
    fn ode_generators_annihilate_pfaffian_forms() {
        for (n, f) in [(4, "p0"), (5, "p2^2"), (6, "p3^2/2 + x*p0")] {
            let d = from_ode_text(n, f).unwrap();
            for form in pfaffian_forms(&d).unwrap() {
                assert!(form.pair(&d.x1).unwrap().is_zero());
                assert!(form.pair(&d.x2).unwrap().is_zero());
            }
        }
    }

    #[test]
    fn cartan_growth_vector() {
        let d = from_ode_text(5, "p2^2").unwrap();
        let q = generic_point(d.chart.dimension());
        assert_eq!(small_growth_vector(&d, &q, 5).unwrap(), vec![2, 3, 5]);
    }

    #[test]
    fn flat_growth_vectors() {
        let d = flat_ode(8).unwrap();
        let q = generic_point(d.chart.dimension());
        assert_eq!(small_growth_vector(&d, &q, 8).unwrap(), vec![2, 3, 5, 6, 7, 8]);
    }

    #[test]
    fn involutive_distribution_is_flat() {
        let chart = Chart::new(&["x", "p0", "z"]).unwrap();
        let d = DistributionSpec::from_fields(
            VectorField::basis(&chart, 0),
            VectorField::basis(&chart, 1),
        )
        .unwrap();
        let q = generic_point(3);
        let gv = small_growth_vector(&d, &q, 4).unwrap();
        assert!(gv.iter().all(|&d| d == 2));
    }

    #[test]
    fn growth_vector_matches_all_words_oracle() {
        let d = from_ode_text(5, "p2^2 + x*p1").unwrap();
        let q = generic_point(5);
        let fast = small_growth_vector(&d, &q, 4).unwrap();
        let slow = growth_vector_all_words(&d, &q, 4).unwrap();
        assert_eq!(fast[..slow.len().min(fast.len())], slow[..slow.len().min(fast.len())]);
    }

    #[test]
    fn growth_vector_monotone_bounded() {
        let d = from_ode_text(6, "p3^2/2 + p0*p3^3").unwrap();
        let q = generic_point(6);
        let gv = small_growth_vector(&d, &q, 6).unwrap();
        for w in gv.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(gv.iter().all(|&d| d <= 6));
    }
}
