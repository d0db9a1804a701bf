//! Certified polynomial sub-value functions for polynomial optimal control.

pub mod hjb;
pub mod model;
pub mod poly;
pub mod reach;
mod scalar;
pub mod sdp;
pub mod sim;
pub mod sos;

pub use scalar::Scalar;

/// Double-precision polynomial, the currency of the synthesis pipeline.
pub type Polynomial = poly::Poly<f64>;
/// Single-precision polynomial, handy for cheap batch evaluation.
pub type PolynomialF32 = poly::Poly<f32>;
