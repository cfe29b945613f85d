//! Energy-stable SBP-SAT discretisation of field-aligned anisotropic diffusion
//! `u_t = (κ u_x)_x + P‖ u` on `[0, L]` with Neumann data, advanced by
//! implicit operator splitting.

pub mod cg;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mms;
pub mod parallel;
pub mod report;
pub mod sbp;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{make_grid, Grid1D, GridFunction};
