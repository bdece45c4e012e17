//! Robust transmit beamforming for a NOMA downlink with imperfect CSI.
//!
//! A multi-antenna base station serves K single-antenna users on the same
//! time-frequency resource, separating them in the power domain with
//! successive interference cancellation at the receivers.  The base station
//! only knows channel estimates; the true channels lie in norm-bounded balls
//! around the estimates.  This crate designs beamformers that minimize total
//! transmit power while guaranteeing every user's SINR target for *every*
//! channel realization in those balls, and it certifies the guarantee
//! independently of the design path.
//!
//! Module map:
//! - [`hermitian`]: complex vectors and Hermitian matrices with the spectral
//!   operations everything else needs,
//! - [`channel`]: scenario parameters and Monte-Carlo channel generation,
//! - [`formulation`]: the worst-case SINR constraints as linear matrix
//!   inequalities, semidefinite relaxation, beamformer extraction,
//! - [`solver`]: a self-contained primal-dual interior-point method for the
//!   resulting block-diagonal semidefinite programs,
//! - [`certify`]: achieved and worst-case SINR evaluation for a fixed design,
//! - [`experiment`]: power-sweep and SINR-distribution harnesses with CSV
//!   output, [`config`]: the plain-text config format the CLI consumes.

pub mod certify;
pub mod channel;
pub mod config;
pub mod experiment;
pub mod formulation;
pub mod hermitian;
pub mod linalg;
pub mod solver;
pub mod units;

pub use certify::SinrReport;
pub use channel::{ChannelSet, Scenario};
pub use experiment::{ExperimentConfig, Scheme, SummaryStats, TrialRecord};
pub use formulation::{BeamDesign, SdpProblem};
pub use hermitian::{BlockDiagMatrix, ComplexVector, HermitianMatrix};
pub use solver::{SdpSolution, SolverOptions, SolverStatus};
