//! Desk-scale solver for the periodic Dirac-Fock mean-field model of a cubic
//! crystal: plane-wave spinor discretization of the Bloch fibers, periodic
//! Coulomb direct and exchange terms, aufbau/retraction solution of the
//! penalized ground-state problem, and independent evaluation of every
//! explicit constant of the model's feasibility analysis.

pub mod constants;
pub mod density;
pub mod dirac;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod meanfield;
pub mod potentials;
pub mod scf;

pub use density::{BlochDensityMatrix, EnergyBreakdown};
pub use error::ModelError;
pub use lattice::{build_basis, build_kgrid, CrystalParams, KGrid, PlaneWaveBasis};
pub use meanfield::{ExchangeScheme, MeanFieldContext};
pub use scf::{solve_penalized, ScfConfig, ScfOutcome};
