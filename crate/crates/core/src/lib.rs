//! Desk-scale neural text-generation laboratory: a small causal language
//! model with exact backpropagation, likelihood and unlikelihood objectives,
//! deterministic and stochastic decoding, and text-degeneration metrics.

pub mod corpus;
pub mod training;
pub mod metrics;
pub mod decoding;
pub mod gradcheck;
pub mod objectives;
pub mod mat;
pub mod model;
pub mod real;

pub use mat::Mat;
pub use real::Real;
