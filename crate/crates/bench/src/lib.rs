//! Fixtures shared by the benchmarks under `benches/`.

use glcouple_core::{CoupledSystem, GridSpec, ProblemSetup};

/// Eight unit patches, coarse spacing 0.25 and fine spacing 0.125.
pub fn eight_patch_grid() -> GridSpec {
    GridSpec::new(2, 2, 2).with_sizes(1.0, 0.25, 0.125)
}

pub fn poisson_system() -> CoupledSystem {
    CoupledSystem::build(&ProblemSetup::poisson(eight_patch_grid())).expect("valid fixture")
}

pub fn elasticity_system() -> CoupledSystem {
    CoupledSystem::build(&ProblemSetup::elasticity(eight_patch_grid())).expect("valid fixture")
}
