//! Staggered-grid solver for a Navier–Stokes–Cahn–Hilliard system with
//! nonlocal (Oono) interactions, a chemotactic nutrient and a singular
//! logarithmic potential, together with the diagnostics needed to check its
//! energy, mass and separation laws.

pub mod chd;
pub mod cli;
pub mod coupled;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod hydro;
pub mod potential;
pub mod stationary;

pub use error::{ChnsError, Result};
