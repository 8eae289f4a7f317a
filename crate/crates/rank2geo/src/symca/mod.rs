//! Exact symbolic kernel: multivariate rational functions over the rationals
//! with differentiation, canonical-form zero testing, and point evaluation.
//!
//! All coefficients are exact `BigRational`s; zero tests are decided by
//! canonical form, never by sampling.

mod gcd;
mod parse;
mod poly;
mod ratexpr;

pub use parse::{parse_expr, ParseError};
pub use gcd::poly_gcd;
pub use poly::{Mono, Poly};
pub use ratexpr::RationalExpr;

use num::BigRational;
use thiserror::Error;

/// A named coordinate in a chart. `index` is its ordinal position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coordinate {
    pub name: String,
    pub index: usize,
}

impl Coordinate {
    pub fn new(name: impl Into<String>, index: usize) -> Self {
        Coordinate { name: name.into(), index }
    }
}

#[derive(Debug, Error)]
pub enum SymcaError {
    #[error("chart mismatch: expression over {expr_vars} variables, coordinate index {index}")]
    ChartMismatch { expr_vars: usize, index: usize },
    #[error("pole: denominator `{denominator}` vanishes at the evaluation point")]
    Pole { denominator: String },
    #[error("division by zero expression")]
    DivisionByZero,
    #[error("expression size limit exceeded: {terms} terms (limit {limit})")]
    TermLimit { terms: usize, limit: usize },
    #[error("evaluation point does not assign coordinate index {index}")]
    UnassignedCoordinate { index: usize },
}

/// Exact rational value used for point evaluation.
pub type Rat = BigRational;

/// Convenience: build a `Rat` from an integer pair.
pub fn rat(n: i64, d: i64) -> Rat {
    use num::BigInt;
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    rat(n, 1)
}
