//! Rational expressions: quotients of polynomials kept in canonical form.
//!
//! Canonical form: numerator and denominator share no polynomial factor,
//! the denominator has integer coefficients with content 1, and its leading
//! coefficient (graded-lex) is positive. Two equal expressions therefore
//! compare equal structurally.

use std::fmt;

use num::{BigRational, One, Signed, Zero};

use super::gcd::poly_gcd;
use super::poly::{Poly, PolyDisplay};
use super::{Rat, SymcaError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalExpr {
    num: Poly,
    den: Poly,
}

impl RationalExpr {
    pub fn zero(nvars: usize) -> Self {
        RationalExpr { num: Poly::zero(nvars), den: Poly::one(nvars) }
    }

    pub fn one(nvars: usize) -> Self {
        RationalExpr { num: Poly::one(nvars), den: Poly::one(nvars) }
    }

    pub fn constant(nvars: usize, c: Rat) -> Self {
        RationalExpr { num: Poly::constant(nvars, c), den: Poly::one(nvars) }
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        RationalExpr { num: Poly::var(nvars, index), den: Poly::one(nvars) }
    }

    pub fn from_poly(p: Poly) -> Self {
        RationalExpr { den: Poly::one(p.nvars), num: p }
    }

    /// Build from a numerator/denominator pair, reducing to canonical form.
    pub fn new(num: Poly, den: Poly) -> Result<Self, SymcaError> {
        if den.is_zero() {
            return Err(SymcaError::DivisionByZero);
        }
        Ok(Self::reduced(num, den))
    }

    fn reduced(num: Poly, den: Poly) -> Self {
        debug_assert!(!den.is_zero());
        if num.is_zero() {
            return RationalExpr::zero(den.nvars);
        }
        let (mut num, mut den) = if den.is_constant() {
            let c = den.constant_value().unwrap();
            (num.scale(&(BigRational::one() / c)), Poly::one(den.nvars))
        } else {
            let g = poly_gcd(&num, &den);
            if g.is_constant() {
                (num, den)
            } else {
                (
                    num.div_exact(&g).expect("gcd divides numerator"),
                    den.div_exact(&g).expect("gcd divides denominator"),
                )
            }
        };
        if !den.is_constant() {
            // make the denominator integer, primitive, positive-leading
            let (int_den, scale) = den.to_integer_scaled();
            let content = int_den.integer_content();
            let mut factor = BigRational::new(scale, content);
            if int_den.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
                factor = -factor;
            }
            num = num.scale(&factor);
            den = den.scale(&factor);
        }
        RationalExpr { num, den }
    }

    /// Canonical form for a pair already known to be in lowest terms:
    /// only the denominator normalization from `reduced`, no gcd.
    fn from_coprime(num: Poly, mut den: Poly) -> Self {
        debug_assert!(!den.is_zero());
        if num.is_zero() {
            return RationalExpr::zero(den.nvars);
        }
        if den.is_constant() {
            let c = den.constant_value().unwrap();
            return RationalExpr {
                num: num.scale(&(BigRational::one() / c)),
                den: Poly::one(den.nvars),
            };
        }
        let (int_den, scale) = den.to_integer_scaled();
        let content = int_den.integer_content();
        let mut factor = BigRational::new(scale, content);
        if int_den.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
            factor = -factor;
        }
        let num = num.scale(&factor);
        den = den.scale(&factor);
        RationalExpr { num, den }
    }

    /// Fraction addition with the classical reduced algorithm: only the
    /// denominators' common part can survive into the result's gcd, so the
    /// expensive reduction runs on small operands instead of full products.
    fn add_signed(&self, other: &RationalExpr, negate: bool) -> RationalExpr {
        if other.num.is_zero() {
            return self.clone();
        }
        if self.num.is_zero() {
            return if negate { other.neg() } else { other.clone() };
        }
        let g = if self.den == other.den {
            self.den.clone()
        } else {
            poly_gcd(&self.den, &other.den)
        };
        if g.is_constant() {
            let rhs = other.num.mul(&self.den);
            let num = if negate {
                self.num.mul(&other.den).sub(&rhs)
            } else {
                self.num.mul(&other.den).add(&rhs)
            };
            return Self::from_coprime(num, self.den.mul(&other.den));
        }
        let b1 = self.den.div_exact(&g).expect("gcd divides denominator");
        let d1 = other.den.div_exact(&g).expect("gcd divides denominator");
        let rhs = other.num.mul(&b1);
        let t = if negate {
            self.num.mul(&d1).sub(&rhs)
        } else {
            self.num.mul(&d1).add(&rhs)
        };
        if t.is_zero() {
            return RationalExpr::zero(self.nvars());
        }
        let h = poly_gcd(&t, &g);
        if h.is_constant() {
            Self::from_coprime(t, self.den.mul(&d1))
        } else {
            let num = t.div_exact(&h).expect("gcd divides");
            let den = self.den.div_exact(&h).expect("gcd divides").mul(&d1);
            Self::from_coprime(num, den)
        }
    }

    pub fn nvars(&self) -> usize {
        self.num.nvars
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_constant(&self) -> bool {
        self.num.is_constant() && self.den.is_constant()
    }

    pub fn constant_value(&self) -> Option<Rat> {
        if self.den.is_constant() {
            // canonical form keeps a constant denominator equal to one
            self.num.constant_value()
        } else {
            None
        }
    }

    pub fn num_terms(&self) -> usize {
        self.num.num_terms() + self.den.num_terms()
    }

    pub fn uses_var(&self, var: usize) -> bool {
        self.num.uses_var(var) || self.den.uses_var(var)
    }

    pub fn add(&self, other: &RationalExpr) -> RationalExpr {
        self.add_signed(other, false)
    }

    pub fn sub(&self, other: &RationalExpr) -> RationalExpr {
        self.add_signed(other, true)
    }

    pub fn neg(&self) -> RationalExpr {
        RationalExpr { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn mul(&self, other: &RationalExpr) -> RationalExpr {
        if self.num.is_zero() || other.num.is_zero() {
            return RationalExpr::zero(self.nvars());
        }
        // cross-reduce before multiplying to keep intermediates small
        let g1 = poly_gcd(&self.num, &other.den);
        let g2 = poly_gcd(&other.num, &self.den);
        let n1 = self.num.div_exact(&g1).expect("gcd divides");
        let d2 = other.den.div_exact(&g1).expect("gcd divides");
        let n2 = other.num.div_exact(&g2).expect("gcd divides");
        let d1 = self.den.div_exact(&g2).expect("gcd divides");
        // cross-reduced factors leave the product in lowest terms already
        Self::from_coprime(n1.mul(&n2), d1.mul(&d2))
    }

    pub fn scale(&self, c: &Rat) -> RationalExpr {
        if c.is_zero() {
            return RationalExpr::zero(self.nvars());
        }
        RationalExpr { num: self.num.scale(c), den: self.den.clone() }
    }

    pub fn div(&self, other: &RationalExpr) -> Result<RationalExpr, SymcaError> {
        if other.is_zero() {
            return Err(SymcaError::DivisionByZero);
        }
        Ok(self.mul(&other.recip()?))
    }

    pub fn recip(&self) -> Result<RationalExpr, SymcaError> {
        if self.is_zero() {
            return Err(SymcaError::DivisionByZero);
        }
        Ok(Self::from_coprime(self.den.clone(), self.num.clone()))
    }

    pub fn pow(&self, e: i32) -> Result<RationalExpr, SymcaError> {
        if e >= 0 {
            Ok(RationalExpr {
                num: self.num.pow(e as u32),
                den: self.den.pow(e as u32),
            })
        } else {
            let r = self.recip()?;
            Ok(RationalExpr {
                num: r.num.pow((-e) as u32),
                den: r.den.pow((-e) as u32),
            })
        }
    }

    /// Quotient-rule derivative.
    pub fn differentiate(&self, var: usize) -> RationalExpr {
        if !self.den.uses_var(var) {
            return Self::reduced(self.num.differentiate(var), self.den.clone());
        }
        // quotient rule with the reduction split off the squared denominator:
        // only repeated factors of den (those shared with its derivative) can
        // cancel, so the gcd runs on den and den' instead of the full products
        let dn = self.num.differentiate(var);
        let dd = self.den.differentiate(var);
        let g = poly_gcd(&self.den, &dd);
        if g.is_constant() {
            let num = dn.mul(&self.den).sub(&self.num.mul(&dd));
            return Self::from_coprime(num, self.den.mul(&self.den));
        }
        let e = self.den.div_exact(&g).expect("gcd divides denominator");
        let v = dd.div_exact(&g).expect("gcd divides derivative");
        let t = dn.mul(&e).sub(&self.num.mul(&v));
        if t.is_zero() {
            return RationalExpr::zero(self.nvars());
        }
        let h = poly_gcd(&t, &g);
        if h.is_constant() {
            Self::from_coprime(t, g.mul(&e).mul(&e))
        } else {
            let num = t.div_exact(&h).expect("gcd divides");
            let den = g.div_exact(&h).expect("gcd divides").mul(&e).mul(&e);
            Self::from_coprime(num, den)
        }
    }

    pub fn evaluate(&self, point: &[Rat]) -> Result<Rat, SymcaError> {
        let d = self.den.evaluate(point);
        if d.is_zero() {
            return Err(SymcaError::Pole { denominator: format!("{:?}", self.den.terms) });
        }
        Ok(self.num.evaluate(point) / d)
    }

    pub fn evaluate_f64(&self, point: &[f64]) -> f64 {
        self.num.evaluate_f64(point) / self.den.evaluate_f64(point)
    }

    /// Substitute exact values for a subset of variables.
    pub fn substitute(&self, assign: &[(usize, Rat)]) -> Result<RationalExpr, SymcaError> {
        let den = self.den.substitute(assign);
        if den.is_zero() {
            return Err(SymcaError::Pole { denominator: format!("{:?}", self.den.terms) });
        }
        Ok(Self::reduced(self.num.substitute(assign), den))
    }

    pub fn extend_vars(&self, new_nvars: usize, var_map: &[usize]) -> RationalExpr {
        RationalExpr {
            num: self.num.extend_vars(new_nvars, var_map),
            den: self.den.extend_vars(new_nvars, var_map),
        }
    }

    pub fn display<'a>(&'a self, names: &'a [String]) -> RationalExprDisplay<'a> {
        RationalExprDisplay { expr: self, names }
    }
}

pub struct RationalExprDisplay<'a> {
    expr: &'a RationalExpr,
    names: &'a [String],
}

impl fmt::Display for RationalExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num: PolyDisplay<'_> = self.expr.num.display(self.names);
        if self.expr.den.constant_value().map(|c| c.is_one()).unwrap_or(false) {
            write!(f, "{num}")
        } else {
            let den = self.expr.den.display(self.names);
            let wrap_num = self.expr.num.num_terms() > 1;
            let wrap_den = self.expr.den.num_terms() > 1;
            match (wrap_num, wrap_den) {
                (false, false) => write!(f, "{num} / {den}"),
                (true, false) => write!(f, "({num}) / {den}"),
                (false, true) => write!(f, "{num} / ({den})"),
                (true, true) => write!(f, "({num}) / ({den})"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{rat, rat_int};
    use super::*;

    fn x() -> RationalExpr {
        RationalExpr::var(2, 0)
    }

    fn y() -> RationalExpr {
        RationalExpr::var(2, 1)
    }

    #[test]
    fn cancellation_is_automatic() {
        // (x^2 - y^2) / (x - y) == x + y
        let num = Poly::var(2, 0).pow(2).sub(&Poly::var(2, 1).pow(2));
        let den = Poly::var(2, 0).sub(&Poly::var(2, 1));
        let r = RationalExpr::new(num, den).unwrap();
        let expect = x().add(&y());
        assert_eq!(r, expect);
    }

    #[test]
    fn denominator_sign_normalized() {
        // x / (-y) and (-x) / y agree structurally
        let a = RationalExpr::new(Poly::var(2, 0), Poly::var(2, 1).neg()).unwrap();
        let b = RationalExpr::new(Poly::var(2, 0).neg(), Poly::var(2, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.denominator().leading().unwrap().1 > &rat_int(0));
    }

    #[test]
    fn field_inverse() {
        let r = x().add(&y().mul(&y())).div(&x().sub(&y())).unwrap();
        let prod = r.mul(&r.recip().unwrap());
        assert_eq!(prod, RationalExpr::one(2));
    }

    #[test]
    fn quotient_rule() {
        // d/dx (x/y) = 1/y, d/dy (x/y) = -x/y^2
        let r = x().div(&y()).unwrap();
        assert_eq!(r.differentiate(0), y().recip().unwrap());
        let expect = x().neg().div(&y().mul(&y())).unwrap();
        assert_eq!(r.differentiate(1), expect);
    }

    #[test]
    fn derivatives_commute() {
        // mixed partials of 1/(x+y^2)
        let r = x().add(&y().mul(&y())).recip().unwrap();
        let dxy = r.differentiate(0).differentiate(1);
        let dyx = r.differentiate(1).differentiate(0);
        assert_eq!(dxy, dyx);
    }

    #[test]
    fn evaluation_matches_structure() {
        let r = x().mul(&x()).sub(&y()).div(&x().add(&y())).unwrap();
        let p = vec![rat(3, 1), rat(1, 2)];
        let v = r.evaluate(&p).unwrap();
        assert_eq!(v, rat(17, 7)); // (9 - 1/2) / (3 + 1/2)
    }

    #[test]
    fn pole_detected() {
        let r = x().recip().unwrap();
        assert!(matches!(r.evaluate(&[rat_int(0), rat_int(1)]), Err(SymcaError::Pole { .. })));
    }

    #[test]
    fn negative_power() {
        let r = x().add(&y()).pow(-2).unwrap();
        let expect = x().add(&y()).mul(&x().add(&y())).recip().unwrap();
        assert_eq!(r, expect);
    }
}
