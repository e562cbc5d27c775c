//! Simulator and sensitivity-analysis toolkit for quantum-enhanced stimulated
//! Raman scattering (SRS) on a two-mode truncated Fock space.
//!
//! The crate builds the SRS quantum channel, computes quantum and
//! method-of-moments Fisher information for the Raman gain strength, and
//! optimizes probe states at a fixed photon budget.

pub mod acceptance;
pub mod channel;
pub mod config;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod lineshape;
pub mod metrology;
pub mod optimizer;
pub mod quad;
pub mod report;
pub mod simplex;
pub mod states;

pub use error::{Error, Result};
pub use fock::{DensityMatrix, FockDims, Mode, Operator};
pub use states::{ProbeFamily, ProbeSpec};
