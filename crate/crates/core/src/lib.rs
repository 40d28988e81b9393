//! Safety-critical control of stochastic control-affine systems whose drift
//! and diffusion are unknown.
//!
//! The pipeline: identify `f`, `g` from CLT-averaged increments with Bayesian
//! linear regression ([`sysid`]), estimate `σ` from residuals with an
//! inverse-gamma MAP ([`sysid`]), then filter controls through a stochastic
//! control barrier function QP ([`controller`]) built on the generator of the
//! learned SDE ([`barrier`]).

pub mod barrier;
pub mod benchmarks;
pub mod controller;
pub mod error;
pub mod jet;
pub mod noise;
pub mod sde;
pub mod sysid;

pub use error::{Error, Result};
