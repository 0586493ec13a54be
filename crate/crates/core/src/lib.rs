//! Coupled simulation of SDEs driven by Lévy processes in the small-time
//! domain of attraction of a stable law, together with the explicit
//! Grönwall-type bounds, rate functions and discrepancy integrals that
//! control the distance between the coupled solutions.

pub mod bounds;
pub mod couplings;
pub mod error;
pub mod experiments;
pub mod levy_model;
pub mod quadrature;
pub mod rng;
pub mod sde_engine;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
