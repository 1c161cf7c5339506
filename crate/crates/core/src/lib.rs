//! Simulation and verification toolkit for non-relativistic spontaneous
//! wave-function collapse models: discrete Gaussian jumps, continuous
//! position localization, and smeared number-density localization on a
//! lattice, plus the ensemble machinery and closed forms used to check them.
//!
//! All dynamics use ħ = 1 and reference mass 1 (see [`units`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod csl;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod grw;
pub mod hamiltonian;
pub mod lindblad;
pub mod measurement;
pub mod noise;
pub mod params;
pub mod qmupl;
pub mod spectral;
pub mod stats;
pub mod units;
pub mod wavefunction;

pub use error::{CollapseError, Result};
pub use grid::{make_grid, SpatialGrid};
pub use hamiltonian::{HamiltonianKind, HamiltonianSpec};
pub use noise::NoiseStream;
pub use params::{CollapseParams, ParticleSpec};
pub use wavefunction::GridWavefunction;
