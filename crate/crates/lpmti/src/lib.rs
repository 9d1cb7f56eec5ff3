//! Simulator and statistical verification harness for last-progeny-modified
//! time-inhomogeneous branching random walks.
//!
//! Particles branch and displace for n generations under reproduction laws
//! that switch between k macroscopic blocks; the final generation receives an
//! extra -(1/theta) log E perturbation with independent unit exponentials.
//! The crate simulates the process exactly at desk scale, computes the
//! analytic quantities its limit theory is built from (cumulants, critical
//! tilts, centering sequences, smoothing-transform fixed points), and checks
//! the limit statements with finite-sample statistical tests.
//!
//! Organization:
//! - [`displacement`]: per-generation point-process models and cumulants
//! - [`cumulant`]: critical tilts, centerings, example constants
//! - [`simulator`]: one-pass depth-first tree simulation and batches
//! - [`rde`]: population dynamics for the smoothing-transform fixed point
//! - [`verify`]: empirical distributions and KS-style checks
//! - [`config`] / [`preset`]: config-driven experiments with artifacts
//! - [`rng`]: counter-based seed-addressable random streams

pub mod config;
pub mod cumulant;
pub mod displacement;
pub mod error;
pub mod preset;
pub mod rde;
pub mod rng;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
