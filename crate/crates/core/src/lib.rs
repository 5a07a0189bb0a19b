//! Non-intrusive global/local coupling for linear elliptic problems.
//!
//! A coarse global model of the whole structure is corrected, through an
//! interface load, until fine patch models solved with Dirichlet data from it
//! are in equilibrium with each other and with the unpatched part Ω⁰. The
//! crate provides the synchronous drivers (fixed relaxation, Aitken,
//! submodeling) and an asynchronous runtime built on emulated one-sided
//! communication windows.

pub mod mesh;
pub mod fem;
pub mod coupling;
pub mod asyncomm;
pub mod report;
pub mod runtime;

pub use coupling::{CoupledSystem, CouplingError, ProblemSetup, SyncConfig, SyncMode};
pub use fem::{Physics, PhysicsKind, SolverKind};
pub use mesh::{GridSpec, PatchedCells};
pub use report::{RankTiming, ResidualRecord, RunMode, RunReport};
