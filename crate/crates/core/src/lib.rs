//! Pseudo-spectral simulation and verification of nonhomogeneous incompressible
//! micropolar fluids with vacuum on the unit torus, in two or three dimensions.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod init;
pub mod interp;
pub mod lagrangian;
pub mod solver;
pub mod spectral;
pub mod stability;
pub mod state;

pub use diagnostics::DiagnosticsRow;
pub use error::{Error, Result};
pub use grid::{ScalarField, TorusGrid, VectorField, TWO_PI};
pub use solver::{run, stable_dt, step, RunObserver, RunOutput, SolverConfig};
pub use state::{Constants, FluidState, Params};
