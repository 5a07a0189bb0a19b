//! Multi-rank drivers on top of `asyncomm`: asynchronous relaxed iteration and
//! the fence-based synchronous iteration, with rank assignment, load
//! emulation and timing.

mod assign;
mod async_driver;
mod convergence;
mod sync_driver;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::asyncomm::{CommError, LatencyModel, DEFAULT_FENCE_TIMEOUT};
use crate::coupling::CouplingError;
use crate::report::RankTiming;

pub use assign::{assign_patches, AssignPolicy, RankAssignment};
pub use async_driver::{run_async, AsyncConfig};
pub use convergence::{AsyncConvergence, AsyncDecision};
pub use sync_driver::run_sync_distributed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error("rank assignment: {0}")]
    Assignment(String),
    #[error("rank {0} worker panicked")]
    WorkerPanic(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Emulated machine conditions and run limits shared by both drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeOptions {
    pub latency: LatencyModel,
    /// `(rank, factor)`: that rank's compute takes `factor` times longer.
    pub slowdown: Vec<(usize, f64)>,
    /// Stretch applied to every rank's compute. With more ranks than cores,
    /// `ranks / cores` makes each rank behave as if it had a core of its own
    /// at reduced speed; see [`host_dilation`].
    pub dilation: f64,
    /// Wall-clock budget; exceeding it ends the run unconverged.
    pub max_wall: Option<Duration>,
    /// No reaction progress for this long raises a warning.
    pub stall_timeout: Duration,
    pub fence_timeout: Duration,
    /// Worker ranks that never compute (liveness tests).
    pub stalled_ranks: Vec<usize>,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions {
            latency: LatencyModel::zero(),
            slowdown: Vec::new(),
            dilation: 1.0,
            max_wall: None,
            stall_timeout: Duration::from_secs(10),
            fence_timeout: DEFAULT_FENCE_TIMEOUT,
            stalled_ranks: Vec::new(),
        }
    }
}

impl RuntimeOptions {
    pub fn slowdown_of(&self, rank: usize) -> f64 {
        self.slowdown.iter().find(|(r, _)| *r == rank).map_or(1.0, |(_, f)| *f)
    }

    /// Total compute stretch of `rank`.
    pub fn compute_factor(&self, rank: usize) -> f64 {
        self.dilation * self.slowdown_of(rank)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if !(self.dilation >= 1.0 && self.dilation.is_finite()) {
            return Err(RuntimeError::Config(format!("dilation must be >= 1, got {}", self.dilation)));
        }
        if let Some((r, f)) = self.slowdown.iter().find(|(_, f)| !(*f >= 1.0) || !f.is_finite()) {
            return Err(RuntimeError::Config(format!("slowdown of rank {r} must be >= 1, got {f}")));
        }
        Ok(())
    }
}

/// Dilation that gives each of `ranks` threads the equivalent of a
/// dedicated core on this host: `max(1, ranks / cores)`.
pub fn host_dilation(ranks: usize) -> f64 {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    (ranks as f64 / cores as f64).max(1.0)
}

/// Share of a rank's wall time spent communicating or waiting.
pub fn measure_comm_fraction(timing: &RankTiming) -> f64 {
    timing.comm_fraction()
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return Duration::ZERO;
    }
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

/// Runs `f`, then sleeps `(factor − 1)` times the CPU time it used. Sleeping
/// keeps the emulated slow machine from stealing cores from the others.
pub fn throttled<T>(factor: f64, f: impl FnOnce() -> T) -> T {
    if factor <= 1.0 {
        return f();
    }
    let c0 = thread_cpu_time();
    let out = f();
    let used = thread_cpu_time().saturating_sub(c0);
    std::thread::sleep(used.mul_f64(factor - 1.0));
    out
}

/// Poll backoff: 100 spins, then 100 µs sleeps.
#[derive(Debug, Default)]
pub(crate) struct Backoff {
    spins: u32,
}

impl Backoff {
    pub(crate) fn snooze(&mut self) {
        if self.spins < 100 {
            self.spins += 1;
            std::hint::spin_loop();
        } else {
            std::thread::sleep(Duration::from_micros(100));
        }
    }

    pub(crate) fn reset(&mut self) {
        self.spins = 0;
    }
}

/// Harness-level failure propagation between rank threads; carries no
/// algorithmic data.
#[derive(Debug, Default)]
pub(crate) struct AbortSignal(AtomicBool);

impl AbortSignal {
    pub(crate) fn raise(&self) {
        self.0.store(true, Ordering::Release);
    }

    pub(crate) fn is_raised(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

pub(crate) fn over_budget(start: Instant, budget: Option<Duration>) -> bool {
    budget.is_some_and(|b| start.elapsed() > b)
}
