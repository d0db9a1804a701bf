//! Sparse multivariate polynomials with float coefficients.

mod basis;
mod monomial;
mod polynomial;
mod text;

pub use basis::{binomial, MonomialBasis};
pub use monomial::Monomial;
pub use polynomial::Poly;
pub use text::{format_poly, parse_poly};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable universe mismatch: {left} vs {right} variables")]
    UniverseMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed integration box at variable {var}")]
    MalformedBox { var: usize },
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("cannot parse polynomial '{input}': {reason}")]
    Parse { input: String, reason: String },
}
