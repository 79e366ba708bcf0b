//! Direct finite elements in time: a Galerkin weak-form transcription of
//! low-thrust optimal control phases into a nonlinear program.
//!
//! States and controls are Lagrange polynomials of degree `p − 1` on the
//! `p` Gauss points of each element; test functions are Lagrange
//! polynomials of degree `p` on `p + 1` Lobatto points. Boundary values are
//! shared between neighbouring elements, so continuity needs no extra
//! constraints.

mod assemble;
mod basis;
mod dynamics;
mod phase;
mod transfer;

use thiserror::Error;

use crate::bodies::CatalogError;
use crate::nlp::NlpError;
use crate::sep::SepError;

pub use assemble::{
    assemble, optimize_nlp, DfetSolution, Link, NodeSample, PhaseGuess, PhaseLayout, PhaseSolution, TranscribedNlp,
};
pub use basis::{gauss_legendre, gauss_lobatto, lagrange, ElementBasis};
pub use dynamics::{Dynamics, DynamicsConfig, SpacecraftModel, StateVector, Units, MASS};
pub use phase::{fet_solve_states, BoundaryCondition, End, FetTrajectory, Mesh, Phase, PhaseObjective};
pub use transfer::{
    setup_transfer, solve_transfer, NodeRecord, TransferConfig, TransferObjective, TransferResult, TransferSetup,
};

#[derive(Debug, Error)]
pub enum DfetError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular dynamics: {0}")]
    Singular(String),
    #[error("Newton iteration failed on element {element} (residual {residual:e}); refine the mesh")]
    MeshTooCoarse { element: usize, residual: f64 },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Sep(#[from] SepError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}
