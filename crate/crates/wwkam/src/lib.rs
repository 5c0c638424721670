//! Normal forms, resonances and small-divisor diagnostics for the
//! deep-water gravity wave Hamiltonian.

pub mod algebraic;
pub mod bnf;
pub mod cli;
pub mod divisors;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod resonance;
pub mod spectrum;

pub use error::{Error, Result};
