use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::fem::solver::norm;
use crate::report::{RankTiming, ResidualRecord, RunMode, RunReport};

use super::relaxation::{aitken_omega, InterfaceState, OmegaBounds};
use super::system::CoupledSystem;
use super::CouplingError;

/// Residual norms at or below this are treated as exact zeros.
pub const ABSOLUTE_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncMode {
    FixedOmega,
    Aitken,
    Submodeling,
}

impl SyncMode {
    pub fn run_mode(self) -> RunMode {
        match self {
            SyncMode::FixedOmega => RunMode::FixedOmega,
            SyncMode::Aitken => RunMode::Aitken,
            SyncMode::Submodeling => RunMode::Submodeling,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncConfig {
    pub mode: SyncMode,
    /// Fixed relaxation factor, or the initial one for Aitken.
    pub omega: f64,
    pub tol: f64,
    pub max_iterations: usize,
    pub bounds: OmegaBounds,
}

impl SyncConfig {
    pub fn new(mode: SyncMode) -> Self {
        SyncConfig {
            mode,
            omega: 1.0,
            tol: 1e-7,
            max_iterations: 500,
            bounds: OmegaBounds::default(),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if !(self.tol > 0.0) {
            return Err(CouplingError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(CouplingError::Config(format!("omega must lie in (0, 2), got {}", self.omega)));
        }
        if self.max_iterations == 0 {
            return Err(CouplingError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Continue,
    Converged,
    /// Iteration budget spent, or submodeling's single round done.
    Stopped,
}

/// Relaxation and convergence bookkeeping of the synchronous iteration,
/// independent of where the local solves run.
#[derive(Clone, Debug)]
pub struct SyncEngine<'a> {
    system: &'a CoupledSystem,
    config: SyncConfig,
    state: InterfaceState,
    r0: Option<f64>,
    rel: f64,
    history: Vec<ResidualRecord>,
    warnings: Vec<String>,
    start: Instant,
}

impl<'a> SyncEngine<'a> {
    pub fn new(system: &'a CoupledSystem, config: SyncConfig) -> Result<Self, CouplingError> {
        config.validate()?;
        Ok(SyncEngine {
            system,
            config,
            state: InterfaceState::new(system.interface_len(), config.omega),
            r0: None,
            rel: f64::INFINITY,
            history: Vec::new(),
            warnings: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn state(&self) -> &InterfaceState {
        &self.state
    }

    /// Number of completed rounds (global solves whose reactions came back).
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn rel_residual(&self) -> f64 {
        self.rel
    }

    pub fn global_step(&self) -> Result<Vec<f64>, CouplingError> {
        self.system.global_solve(&self.state.p)
    }

    /// Consumes the reactions produced from `u_g`, tests convergence and, if
    /// the run goes on, updates `p`.
    pub fn absorb(&mut self, u_g: &[f64], reactions: &[Vec<f64>]) -> Step {
        let lam0 = self.system.complement_reaction(u_g);
        let r = self.system.residual(reactions, &lam0);
        let rn = norm(&r);
        let r0 = *self.r0.get_or_insert(rn);
        self.rel = if r0 > 0.0 { rn / r0 } else { 0.0 };
        self.state.record_residual(r);
        let k = self.history.len() + 1;
        self.history.push(ResidualRecord {
            k,
            rel_residual: self.rel,
            omega: self.state.omega,
            t_seconds: self.start.elapsed().as_secs_f64(),
        });
        log::trace!("sync k={k} rel={:e} omega={}", self.rel, self.state.omega);
        if rn <= ABSOLUTE_FLOOR || self.rel <= self.config.tol {
            return Step::Converged;
        }
        if self.config.mode == SyncMode::Submodeling || k >= self.config.max_iterations {
            return Step::Stopped;
        }
        let omega = match (self.config.mode, &self.state.r_prev) {
            (SyncMode::Aitken, Some(prev)) => match aitken_omega(prev, &self.state.r, self.state.omega, self.config.bounds) {
                Ok(w) => w,
                Err(e) => {
                    self.warnings.push(format!("iteration {k}: {e}; omega reset to {}", self.config.omega));
                    self.config.omega
                }
            },
            (SyncMode::Aitken, None) => self.config.omega,
            _ => self.config.omega,
        };
        self.state.richardson_update(omega);
        Step::Continue
    }

    /// Report with the given timings; `local_solves` per patch.
    pub fn report(&self, step: Step, local_solves: Vec<usize>, wall: Duration, rank_timings: Vec<RankTiming>) -> RunReport {
        RunReport {
            mode: self.config.mode.run_mode(),
            global_iterations: self.iterations(),
            local_solves,
            wall_time: wall,
            rank_timings,
            history: self.history.clone(),
            converged: step == Step::Converged,
            final_rel_residual: self.rel,
            warnings: self.warnings.clone(),
        }
    }

    pub fn into_state(self) -> InterfaceState {
        self.state
    }
}

/// Result of a coupling run.
#[derive(Clone, Debug)]
pub struct CouplingOutcome {
    pub report: RunReport,
    /// Converged (or last) immersed interface load.
    pub p: Vec<f64>,
    /// Last global solution.
    pub u_global: Vec<f64>,
    /// Last fine field of every patch.
    pub local_fields: Vec<Vec<f64>>,
    /// Last residual.
    pub residual: Vec<f64>,
}

/// In-process synchronous iteration; local solves fan out over the rayon pool.
pub fn run_synchronous(system: &CoupledSystem, config: &SyncConfig) -> Result<CouplingOutcome, CouplingError> {
    let start = Instant::now();
    let mut engine = SyncEngine::new(system, *config)?;
    let n = system.num_patches();
    loop {
        let u_g = engine.global_step()?;
        let results = (0..n)
            .into_par_iter()
            .map(|s| system.local_solve(s, &u_g))
            .collect::<Result<Vec<_>, _>>()?;
        let (fields, reactions): (Vec<_>, Vec<_>) = results.into_iter().map(|r| (r.field, r.reaction)).unzip();
        let step = engine.absorb(&u_g, &reactions);
        if step != Step::Continue {
            let wall = start.elapsed();
            let iters = engine.iterations();
            let timing = RankTiming {
                rank: 0,
                wall,
                ..Default::default()
            };
            let report = engine.report(step, vec![iters; n], wall, vec![timing]);
            let state = engine.into_state();
            return Ok(CouplingOutcome {
                report,
                p: state.p,
                u_global: u_g,
                local_fields: fields,
                residual: state.r,
            });
        }
    }
}
