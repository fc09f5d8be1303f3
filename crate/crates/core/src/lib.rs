//! Generalized Kyle insider-trading equilibria solved through optimal
//! transport: closed-form potentials and maps, heat-semigroup pricing,
//! filtering, trading strategies, Monte Carlo simulation and verification.

pub mod cli;
pub mod config;
pub mod error;
pub mod filtering;
pub mod model;
pub mod poly;
pub mod pricing;
pub mod quadrature;
pub mod simulate;
pub mod stats;
pub mod strategy;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
