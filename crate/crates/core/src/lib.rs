//! Fractional optimal rearrangement on uniform grids.
//!
//! The crate discretizes the fractional Laplacian with zero exterior data
//! ([`operator`]), solves the associated Dirichlet problem ([`dirichlet`]),
//! minimizes the energy `Φ_s(f) = |u_f|_s²` over densities `0 ≤ f ≤ 1` with
//! prescribed mass ([`rearrangement`]), solves the equivalent normalized
//! fractional obstacle problem ([`obstacle`]) and compares the fractional
//! optimizers against the local (`s = 1`) problem ([`slimit`]).

pub mod cli;
pub mod dirichlet;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod obstacle;
pub mod operator;
pub mod quad;
pub mod rearrangement;
pub mod slimit;

pub use error::{Error, Result};
pub use grid::{build_grid, Domain, Field, Grid};
pub use kernel::KernelParams;
pub use operator::{assemble, Operator};
