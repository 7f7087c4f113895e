//! Workbench for the N-BBM particle system.
//!
//! The crate is split along the objects it manipulates:
//!
//! * [`density`]: grid densities, the cut operator, the grow-diffuse
//!   semigroup and the tail order.
//! * [`barriers_macro`]: deterministic upper/lower barrier semigroups and the
//!   dyadic squeeze that brackets the hydrodynamic limit.
//! * [`bbm_sim`]: exact event-driven simulation of ranked BBM forests and of
//!   the N-BBM selection dynamics.
//! * [`barriers_micro`]: stochastic barriers and the labelled coupling that
//!   orders lower barrier, N-BBM and upper barrier pathwise.
//! * [`fbp`]: traveling waves of the free boundary problem, boundary curves,
//!   Brownian first-passage Monte Carlo and speed estimation.
//! * [`harness`]: experiment configuration, the experiment registry and
//!   report emission.

pub mod barriers_macro;
pub mod barriers_micro;
pub mod bbm_sim;
pub mod density;
pub mod error;
pub mod fbp;
pub mod harness;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
