//! Stochastic control barrier functions: generators, high-order chains,
//! level-set suprema and worst-case safety-probability bounds.

mod bounds;
mod chain;
mod fields;
mod generator;
pub mod library;

pub use bounds::{worst_case_bound, BoundInput, BoundKind, SafetyBound};
pub use chain::{build_chain, sup_over_set, BarrierChain, ChainOptions, ChainReport, LevelReport, Region, SupEstimate};
pub use fields::{AnalyticField, Derivation, DualField, FiniteDiffField, ScalarExpr, ScalarField};
pub use generator::{drift_generator_jet, generator, generator_from_derivatives, GeneratorAffine, GeneratorField};
