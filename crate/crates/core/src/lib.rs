//! Finite-volume homogenization for random conductance models on `Z^d`.
//!
//! The crate computes the periodic corrector field and diffusion matrix of a
//! reversible random walk among i.i.d. bond conductances, the effective
//! conductance of a cube between opposite faces, the lowest Dirichlet
//! eigenvalue, and the Green function of a walk killed by a random potential,
//! together with seeded Monte Carlo sweeps that test the concentration and
//! variance bounds of these statistics at desk scale.

pub mod conductance;
pub mod corrector;
pub mod error;
pub mod experiments;
pub mod lattice_env;
pub mod numerics;
pub mod potential_walk;
pub mod rng;
pub mod spectral;
pub mod symeig;

pub use error::{Error, Result};
