//! Numerical laboratory for mean-field control of a diffusion-aggregation
//! particle system with regularized Coulomb interaction and its
//! Keller-Segel limit.

pub mod chaos;
pub mod cli;
pub mod config;
pub mod control;
pub mod cost;
pub mod density;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod numerics;
pub mod optimize;
pub mod particles;
pub mod pde;

pub use error::{Error, Result};
