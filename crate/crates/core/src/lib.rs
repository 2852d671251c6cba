//! Monte Carlo laboratory for superdiffusions.
//!
//! The branching-particle approximation ([`sim`]) is checked against exact
//! Gaussian semigroups ([`semigroups`]) and a finite-difference solver for the
//! log-Laplace equation ([`pde`]); [`experiments`] turns replicated runs into
//! the statistics behind the laws of large numbers, and [`config`] drives it
//! all from a TOML file.

pub mod config;
pub mod error;
pub mod experiments;
pub mod pde;
pub mod fields;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod semigroups;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
