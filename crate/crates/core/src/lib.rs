//! Spectral Galerkin simulator for the stochastic Cahn-Hilliard-Brinkman
//! system with bulk-surface dynamic boundary conditions of Robin type (`K > 0`)
//! on a periodic channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: channel, bases, quadrature, transforms, Korn/Poincare samples
//! - [`potentials`]: double wells and their Yosida regularization
//! - [`noise`]: truncated Wiener processes and Nemytskii diffusions
//! - [`galerkin`]: chemical potentials, Brinkman solve, drift
//! - [`timestepper`]: explicit and semi-implicit Euler-Maruyama paths
//! - [`diagnostics`]: energy ledger, Ito identity, Monte-Carlo certificates
//!
//! Path ensembles run on rayon when the `parallel` feature is enabled.

pub mod diagnostics;
pub mod error;
pub mod galerkin;
pub mod geometry;
pub mod noise;
pub mod parallel;
pub mod potentials;
pub mod timestepper;

pub use error::{ChbError, Result};
