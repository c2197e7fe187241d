//! Effective conductance of random resistor networks on `ℤ^d`.
//!
//! The crate is organized bottom-up: [`lattice`] describes the box and its
//! edge order, [`environment`] holds conductance configurations, [`solver`]
//! solves Dirichlet problems, and [`green`], [`meyers`] and [`martingale`]
//! build on it. [`harness`] runs Monte Carlo experiments.

pub mod environment;
pub mod error;
pub mod green;
pub mod harness;
pub mod lattice;
pub mod martingale;
pub mod meyers;
pub mod quadrature;
pub mod solver;

pub use environment::{ConductanceLaw, Environment};
pub use error::{OhmError, Result};
pub use lattice::{BoxDomain, EdgeKey, Point};
pub use solver::{HarmonicCoordinate, LatticeField, SolveReport};
