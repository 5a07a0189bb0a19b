//! Global/local iteration: interface transfer, residual, relaxation and the
//! synchronous driver.

pub mod driver;
pub mod reference;
pub mod relaxation;
pub mod system;
pub mod transfer;

use thiserror::Error;

use crate::fem::FemError;
use crate::mesh::{MeshError, Point};

pub use driver::{run_synchronous, CouplingOutcome, Step, SyncConfig, SyncEngine, SyncMode, ABSOLUTE_FLOOR};
pub use reference::{monolithic_reference, MonolithicSolution};
pub use relaxation::{aitken_omega, aitken_omega_unclamped, richardson_update, InterfaceState, OmegaBounds, Stagnation};
pub use system::{CoupledSystem, LocalModel, LocalResult, ProblemSetup};
pub use transfer::{build_transfer, TransferOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("patch {patch}: {source}")]
    Patch { patch: usize, source: FemError },
    #[error("patch {patch}: interface node at {point:?} lies on no global interface face")]
    Locate { patch: usize, point: Point },
    #[error("invalid configuration: {0}")]
    Config(String),
}
