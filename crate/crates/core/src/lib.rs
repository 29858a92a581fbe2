//! Discrete machinery for radial symmetry of constrained quasi-linear minimizers.
//!
//! The crate works on uniform cell-centered grids (`grid`), rearranges grid
//! functions by Schwarz symmetrization and two-point polarization
//! (`rearrange`), evaluates quasi-linear energies `E(u) = ∫ j(u,|Du|) - ∫ F(|x|,u)`
//! under the constraint `∫ G(u) = 1` (`model`, `energy`), minimizes them by
//! projected gradient descent (`optimize`), and audits the resulting
//! minimizers for radial symmetry (`harness`).

// Negated comparisons double as NaN rejection throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod model;
pub mod optimize;
pub mod rearrange;

pub use error::{Error, Result};
pub use grid::{make_domain, CellField, GridDomain, GridFunction, Shape};
pub use model::{preset, VariationalModel};
