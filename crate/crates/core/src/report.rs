//! Run summaries shared by the synchronous and asynchronous drivers.

use std::fmt;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunMode {
    FixedOmega,
    Aitken,
    Submodeling,
    Async,
}

impl RunMode {
    pub fn name(&self) -> &'static str {
        match self {
            RunMode::FixedOmega => "fixed",
            RunMode::Aitken => "aitken",
            RunMode::Submodeling => "submodeling",
            RunMode::Async => "async",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fixed" => RunMode::FixedOmega,
            "aitken" => RunMode::Aitken,
            "submodeling" => RunMode::Submodeling,
            "async" => RunMode::Async,
            _ => return None,
        })
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRecord {
    pub k: usize,
    pub rel_residual: f64,
    pub omega: f64,
    pub t_seconds: f64,
}

/// Time split of one rank. `comm` covers window operations, `wait` covers
/// barriers and polling for new data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RankTiming {
    pub rank: usize,
    pub wall: Duration,
    pub comm: Duration,
    pub wait: Duration,
}

impl RankTiming {
    /// Share of wall time not spent computing, in [0, 1].
    pub fn comm_fraction(&self) -> f64 {
        let wall = self.wall.as_secs_f64();
        if wall <= 0.0 {
            return 0.0;
        }
        ((self.comm + self.wait).as_secs_f64() / wall).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: RunMode,
    /// Number of global solves.
    pub global_iterations: usize,
    /// Local solve count per patch.
    pub local_solves: Vec<usize>,
    pub wall_time: Duration,
    pub rank_timings: Vec<RankTiming>,
    pub history: Vec<ResidualRecord>,
    pub converged: bool,
    pub final_rel_residual: f64,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn loc_min(&self) -> usize {
        self.local_solves.iter().copied().min().unwrap_or(0)
    }

    pub fn loc_max(&self) -> usize {
        self.local_solves.iter().copied().max().unwrap_or(0)
    }

    /// Aggregate over ranks: total non-compute time over total wall time.
    pub fn comm_fraction(&self) -> f64 {
        let wall: f64 = self.rank_timings.iter().map(|t| t.wall.as_secs_f64()).sum();
        if wall <= 0.0 {
            return 0.0;
        }
        let busy: f64 = self
            .rank_timings
            .iter()
            .map(|t| (t.comm + t.wait).as_secs_f64())
            .sum();
        (busy / wall).clamp(0.0, 1.0)
    }

    pub fn comm_pct(&self) -> f64 {
        100.0 * self.comm_fraction()
    }

    /// Table cell: `N[lmin, lmax] & T s[c%]` for async runs, `N & T s[c%]`
    /// otherwise.
    pub fn table_cell(&self) -> String {
        let t = self.wall_time.as_secs_f64();
        let c = self.comm_pct();
        match self.mode {
            RunMode::Async => format!(
                "{}[{}, {}] & {:.2}s[{:.0}%]",
                self.global_iterations,
                self.loc_min(),
                self.loc_max(),
                t,
                c
            ),
            _ => format!("{} & {:.2}s[{:.0}%]", self.global_iterations, t, c),
        }
    }
}
