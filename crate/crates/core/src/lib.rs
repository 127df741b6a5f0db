//! Quantitative photoacoustic tomography with a radiative-transfer light
//! model: discrete-ordinate transport solver, absorbed-energy forward map,
//! adjoint sensitivities, and Tikhonov, level-set and Kaczmarz
//! reconstructions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod grid;
pub mod io;
pub mod lbfgs;
pub mod levelset;
pub mod multi;
pub mod phantom;
pub mod sensitivity;
pub mod tikhonov;
pub mod transport;

pub use error::{Error, Result};
pub use field::{AngularField, EnergyMap, Field2, FluenceMap, Radiance, VolumeSource};
pub use grid::{AngularQuadrature, Bounds, Grid2D, OpticalPair, PhaseMatrix, PhaseSpace, Side};
pub use transport::{BoundarySource, SolverOptions};
