//! Provable repair of small ReLU networks with an external SMT solver.
//!
//! A trained network that violates an adversarial-robustness property is
//! repaired by freeing a few of its parameters, asking the solver for values
//! that make the property hold on the whole input ball, and keeping the
//! candidate that stays closest to the original decisions.

pub mod datagen;
pub mod evaluator;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod network;
pub mod rational;
pub mod repair;
pub mod scalar;
pub mod smt;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{LayerParams, Network, ParamKind, WeightFilter, WeightId, WeightSelection};
pub use scalar::Scalar;

pub use num_rational::BigRational;

/// Network evaluated in double precision (training, bulk evaluation).
pub type FloatNetwork = Network<f64>;
/// Network with exact rational parameters (encoding, soundness replay).
pub use network::ExactNetwork;
/// Single-precision network.
pub type F32Network = Network<f32>;
