//! Simulator and verification harness for a sliding-mode controlled viscous
//! Cahn-Hilliard / reaction-diffusion tumor growth system.
//!
//! The state is a triple `(phi, mu, sigma)`: a phase field interpolating
//! between tumor (`phi = 1`) and healthy tissue (`phi = -1`), the chemical
//! potential driving its evolution, and a nutrient concentration. A feedback
//! term `rho * sign(phi - phi_star)` inserted in the chemical-potential
//! relation drives the phase onto the target `phi_star` in finite time; the
//! simulator integrates the boundary-layer regularization of that system and
//! checks the reaching statement as an executable property.
//!
//! The crate provides:
//!
//! * nodal grids, quadrature norms and data validation ([`grid`],
//!   [`validate`]),
//! * the double-well potential family with its Yosida regularizations
//!   ([`potential`]),
//! * discrete Laplacians, the Dirichlet solver, the induced `H^{-1}` norm,
//!   harmonic extension of boundary data and an embedding-constant estimator
//!   ([`elliptic`]),
//! * implicit time integration of the regularized system ([`dynamics`]),
//! * the certificate ledger: `M`, `M0`, `M_pi*`, `C_sys`, `A(rho)`, `rho*`,
//!   `T*`, the comparison envelope `w(t)` and reaching detection
//!   ([`sliding`]),
//! * configuration parsing, time-series/snapshot output and run
//!   orchestration ([`config`], [`timeseries`], [`output`], [`harness`]).

pub mod config;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod harness;
pub mod output;
pub mod potential;
pub mod sliding;
pub mod solver;
pub mod timeseries;
pub mod validate;
pub mod verify;

pub use config::RunConfig;
pub use error::Error;
pub use grid::{Grid, ScalarField, TimeConfig};
pub use potential::{PotentialKind, PotentialSpec};
pub use sliding::SlidingCertificate;
pub use timeseries::TimeSeries;
