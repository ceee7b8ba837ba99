//! Spectral solver and decay-rate toolkit for a hyperbolic-parabolic
//! chemotaxis system on the periodic torus.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod model;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Grid, NormKind, ScalarField, Spectral, SpectralState, VectorField};
pub use model::{ModelParams, SourceSpec};
