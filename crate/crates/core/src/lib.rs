//! Auctions under population uncertainty.
//!
//! Type models and bidder-count priors, the outcome rules of lit, dark and
//! tie-corrected auction formats, their equilibrium bids, exact and sampled
//! revenue, and deviation searches for identity compatibility.

pub mod defaults;
pub mod distributions;
pub mod enumerate;
pub mod equilibrium;
pub mod experiment;
pub mod identity;
pub mod mechanisms;
pub mod quadrature;
pub mod reproduce;
pub mod revenue;
pub mod scalar;

pub use distributions::{ContinuousModel, FiniteTypeModel, PopulationModel, TypeModel};
pub use mechanisms::{FormatTag, Mechanism, MechanismSpec, Outcome, TieRule, TypeProfile};
pub use scalar::Scalar;

/// Exact rational scalar.
pub type Rational = num_rational::BigRational;
/// A mechanism over exact rationals.
pub type ExactMechanism = Mechanism<Rational>;
/// A mechanism over `f64`.
pub type FloatMechanism = Mechanism<f64>;
