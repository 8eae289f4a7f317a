//! Exact local-geometry toolkit for rank 2 vector distributions.
//!
//! The crate computes, symbolically over the rationals, the invariants that
//! classify completely nonholonomic rank 2 distributions near a generic
//! point: growth vectors, characteristic vector fields on the annihilator of
//! the square of the distribution, flags of the associated abnormal
//! extremals, the induced projective curve invariants, and a canonical
//! moving frame whose structure constants detect the maximally symmetric
//! models.

pub mod cli;
pub mod cotangent;
pub mod flags;
pub mod frame;
pub mod geometry;
pub mod linalg;
pub mod symca;
pub mod wilczynski;
