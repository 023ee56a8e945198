//! Numerical laboratory for inverse boundary problems of quasilinear
//! conductivity equations on the unit square.

pub mod density;
pub mod dtn;
pub mod error;
pub mod forward;
pub mod grid;
pub mod harmonic;
pub mod io;
pub mod linalg;
pub mod model;
pub mod recon;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{boundary_arc, build_grid, BoundaryData, BoundarySet, Grid2D, ScalarField};
