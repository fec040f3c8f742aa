//! Simulation of non-nestling random walks in i.i.d. random environments on
//! Z^d: lazy environments, quenched walks, regeneration times, common
//! regeneration times of walk pairs, the difference chain and its
//! symmetric comparison walk, and the one-dimensional renewal numerics
//! used to study them.

pub mod env;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod pair;
pub mod regen;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
