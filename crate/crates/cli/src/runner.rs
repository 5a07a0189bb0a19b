use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Duration;

use glcouple_core::coupling::{run_synchronous, CoupledSystem, CouplingError, SyncConfig, SyncMode};
use glcouple_core::runtime::{
    assign_patches, host_dilation, run_async, run_sync_distributed, AsyncConfig, RuntimeError, RuntimeOptions,
};
use glcouple_core::{RunMode, RunReport};
use thiserror::Error;

use crate::config::{ConfigError, Driver, Scenario};
use crate::profiles::LoadProfile;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const RESULT_COLUMNS: [&str; 10] = [
    "scenario_id",
    "mode",
    "ranks",
    "iter_global",
    "loc_min",
    "loc_max",
    "wall_time_s",
    "comm_pct",
    "final_rel_residual",
    "converged",
];

pub const HISTORY_COLUMNS: [&str; 3] = ["k", "rel_residual", "t_seconds"];

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario_id: String,
    pub mode: RunMode,
    pub ranks: usize,
    pub iter_global: usize,
    pub loc_min: usize,
    pub loc_max: usize,
    pub wall_time_s: f64,
    pub comm_pct: f64,
    pub final_rel_residual: f64,
    pub converged: bool,
}

impl ResultRow {
    pub fn new(scenario_id: &str, ranks: usize, report: &RunReport) -> Self {
        ResultRow {
            scenario_id: scenario_id.into(),
            mode: report.mode,
            ranks,
            iter_global: report.global_iterations,
            loc_min: report.loc_min(),
            loc_max: report.loc_max(),
            wall_time_s: report.wall_time.as_secs_f64(),
            comm_pct: report.comm_pct(),
            final_rel_residual: report.final_rel_residual,
            converged: report.converged,
        }
    }

    pub fn record(&self) -> [String; 10] {
        [
            self.scenario_id.clone(),
            self.mode.name().into(),
            self.ranks.to_string(),
            self.iter_global.to_string(),
            self.loc_min.to_string(),
            self.loc_max.to_string(),
            format!("{:.6}", self.wall_time_s),
            format!("{:.2}", self.comm_pct),
            format!("{:e}", self.final_rel_residual),
            self.converged.to_string(),
        ]
    }
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_history(path: &Path, report: &RunReport) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_COLUMNS)?;
    for h in &report.history {
        w.write_record([h.k.to_string(), format!("{:e}", h.rel_residual), format!("{:.6}", h.t_seconds)])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn report_text(sc: &Scenario, row: &ResultRow, report: &RunReport) -> String {
    let mut s = String::new();
    s.push_str("# iter_global counts global solves; loc counts are local solves per patch\n");
    s.push_str(&format!("scenario: {}\nmode: {}\nranks: {}\n", sc.id, row.mode, row.ranks));
    s.push_str(&format!("omega: {}\ntol: {:e}\n", sc.effective_omega(), sc.tol));
    s.push_str(&format!("converged: {}\nfinal_rel_residual: {:e}\n", row.converged, row.final_rel_residual));
    s.push_str(&format!("cell: {}\n", report.table_cell()));
    for w in &report.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

/// Runtime options of `sc`, with `profile` overriding its load model.
pub fn runtime_options(sc: &Scenario, ranks: usize, profile: Option<&LoadProfile>) -> RuntimeOptions {
    let (latency, slowdown) = match profile {
        Some(p) => (p.latency.clone(), p.slowdown.clone()),
        None => (sc.latency.clone(), sc.slowdown.clone()),
    };
    RuntimeOptions {
        latency,
        slowdown,
        dilation: sc.dilation.unwrap_or_else(|| host_dilation(ranks)),
        max_wall: sc.max_wall_seconds.map(Duration::from_secs_f64),
        ..RuntimeOptions::default()
    }
}

/// Runs `mode` of `sc` on an already built system. Returns the report and
/// the rank count it ran on (1 for the in-process driver).
pub fn execute(
    sc: &Scenario,
    system: &CoupledSystem,
    mode: RunMode,
    ranks: usize,
    profile: Option<&LoadProfile>,
) -> Result<(RunReport, usize), RunError> {
    let mut sc = sc.clone();
    sc.mode = mode;
    let sync_mode = match mode {
        RunMode::FixedOmega => Some(SyncMode::FixedOmega),
        RunMode::Aitken => Some(SyncMode::Aitken),
        RunMode::Submodeling => Some(SyncMode::Submodeling),
        RunMode::Async => None,
    };
    match (sync_mode, sc.driver) {
        (Some(m), Driver::InProcess) if profile.is_none() => {
            let cfg = sync_config(&sc, m);
            Ok((run_synchronous(system, &cfg)?.report, 1))
        }
        (Some(m), _) => {
            let a = assign_patches(system.num_patches(), ranks, sc.assignment)?;
            let opts = runtime_options(&sc, ranks, profile);
            Ok((run_sync_distributed(system, &a, &sync_config(&sc, m), &opts)?.report, ranks))
        }
        (None, _) => {
            let a = assign_patches(system.num_patches(), ranks, sc.assignment)?;
            let opts = runtime_options(&sc, ranks, profile);
            let cfg = AsyncConfig {
                omega: sc.effective_omega(),
                tol: sc.tol,
                max_iterations: sc.effective_max_iterations(),
            };
            Ok((run_async(system, &a, &cfg, &opts)?.report, ranks))
        }
    }
}

fn sync_config(sc: &Scenario, mode: SyncMode) -> SyncConfig {
    SyncConfig::new(mode)
        .with_omega(sc.effective_omega())
        .with_tol(sc.tol)
        .with_max_iterations(sc.effective_max_iterations())
}

fn artifact_stem(sc: &Scenario, mode: RunMode, ranks: usize) -> String {
    format!("{}_{}_r{ranks}", sc.id, mode.name())
}

/// Writes the history CSV and report of one run and appends its row.
pub fn emit(sc: &Scenario, report: &RunReport, ranks: usize, out_dir: &Path) -> Result<ResultRow, RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let row = ResultRow::new(&sc.id, ranks, report);
    let stem = artifact_stem(sc, report.mode, ranks);
    write_history(&out_dir.join(format!("{stem}_history.csv")), report)?;
    let path = out_dir.join(format!("{stem}_report.txt"));
    fs::write(&path, report_text(sc, &row, report)).map_err(io_err(&path))?;
    append_rows(&out_dir.join("results.csv"), std::slice::from_ref(&row))?;
    Ok(row)
}

/// Runs the scenario's own mode and writes its artifacts under `out_dir`.
pub fn run_scenario(sc: &Scenario, out_dir: &Path) -> Result<(ResultRow, RunReport), RunError> {
    sc.validate()?;
    let system = CoupledSystem::build(&sc.setup)?;
    let (report, ranks) = execute(sc, &system, sc.mode, sc.ranks, None)?;
    let row = emit(sc, &report, ranks, out_dir)?;
    log::info!("{} {}: {}", sc.id, row.mode, report.table_cell());
    Ok((row, report))
}

/// Outcome of one sweep cell; failures are kept, not propagated.
pub type Cell = Result<RunReport, String>;

fn cell_text(c: &Cell) -> String {
    match c {
        Ok(r) => r.table_cell(),
        Err(e) => format!("error: {e}"),
    }
}

#[derive(Debug)]
pub struct RanksSweep {
    /// `(ranks, aitken, async)`
    pub rows: Vec<(usize, Cell, Cell)>,
}

impl RanksSweep {
    pub fn table(&self) -> String {
        let mut s = String::from("#ranks | Aitken | Asynchronous\n");
        for (r, a, b) in &self.rows {
            s.push_str(&format!("{r} | {} | {}\n", cell_text(a), cell_text(b)));
        }
        s
    }
}

fn run_cell(
    sc: &Scenario,
    system: &CoupledSystem,
    mode: RunMode,
    ranks: usize,
    profile: Option<&LoadProfile>,
    out_dir: &Path,
) -> Result<Cell, RunError> {
    match execute(sc, system, mode, ranks, profile) {
        Ok((report, ranks)) => {
            emit(sc, &report, ranks, out_dir)?;
            Ok(Ok(report))
        }
        Err(e @ RunError::Io { .. }) | Err(e @ RunError::Csv(_)) => Err(e),
        Err(e) => {
            log::warn!("{} {mode} on {ranks} ranks failed: {e}", sc.id);
            Ok(Err(e.to_string()))
        }
    }
}

/// Sync-Aitken and async on every rank count; the sync side always uses the
/// distributed driver so that both pay for communication.
pub fn sweep_ranks(sc: &Scenario, ranks: &[usize], out_dir: &Path) -> Result<RanksSweep, RunError> {
    sc.validate()?;
    let system = CoupledSystem::build(&sc.setup)?;
    let mut sync_sc = sc.clone();
    sync_sc.driver = Driver::Distributed;
    let mut rows = Vec::new();
    for &r in ranks {
        let a = run_cell(&sync_sc, &system, RunMode::Aitken, r, None, out_dir)?;
        let b = run_cell(sc, &system, RunMode::Async, r, None, out_dir)?;
        rows.push((r, a, b));
    }
    let sweep = RanksSweep { rows };
    let path = out_dir.join(format!("{}_sweep_ranks.txt", sc.id));
    fs::write(&path, sweep.table()).map_err(io_err(&path))?;
    Ok(sweep)
}

#[derive(Debug)]
pub struct ImbalanceSweep {
    /// `(profile, aitken, async)`
    pub tables: Vec<(LoadProfile, Cell, Cell)>,
}

/// The load-imbalance table layout: time, global sweeps, local solve range.
pub fn imbalance_table(profile: &LoadProfile, aitken: &Cell, asynchronous: &Cell) -> String {
    let time = |c: &Cell| c.as_ref().map_or_else(|e| format!("error: {e}"), |r| format!("{:.2}", r.wall_time.as_secs_f64()));
    let iters = |c: &Cell| c.as_ref().map_or("-".to_string(), |r| r.global_iterations.to_string());
    let locs = asynchronous.as_ref().map_or("-".to_string(), |r| format!("[{} - {}]", r.loc_min(), r.loc_max()));
    let mut s = format!("# profile {} ({})\n", profile.name, profile.note);
    s.push_str("Model | Aitken | Relaxed asynchronous\n");
    s.push_str(&format!("Time(s) | {} | {}\n", time(aitken), time(asynchronous)));
    s.push_str(&format!("Async. #iter. glob. | {} | {}\n", iters(aitken), iters(asynchronous)));
    s.push_str(&format!("Async. #loc. sol. [min, max] | - | {locs}\n"));
    s
}

impl ImbalanceSweep {
    pub fn table(&self) -> String {
        self.tables
            .iter()
            .map(|(p, a, b)| imbalance_table(p, a, b))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn sweep_imbalance(sc: &Scenario, profiles: &[LoadProfile], out_dir: &Path) -> Result<ImbalanceSweep, RunError> {
    sc.validate()?;
    let system = CoupledSystem::build(&sc.setup)?;
    let mut tables = Vec::new();
    for p in profiles {
        let mut psc = sc.clone();
        psc.id = format!("{}-{}", sc.id, p.name);
        let a = run_cell(&psc, &system, RunMode::Aitken, sc.ranks, Some(p), out_dir)?;
        let b = run_cell(&psc, &system, RunMode::Async, sc.ranks, Some(p), out_dir)?;
        tables.push((p.clone(), a, b));
    }
    let sweep = ImbalanceSweep { tables };
    let path = out_dir.join(format!("{}_sweep_imbalance.txt", sc.id));
    fs::write(&path, sweep.table()).map_err(io_err(&path))?;
    Ok(sweep)
}
