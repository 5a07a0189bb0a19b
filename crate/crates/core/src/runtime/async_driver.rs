use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::asyncomm::{decode_payload, encode_payload, payload_size, AccessMode, Comm, StopFlag, Window};
use crate::coupling::{richardson_update, CoupledSystem, CouplingOutcome, ABSOLUTE_FLOOR};
use crate::fem::solver::norm;
use crate::report::{RankTiming, ResidualRecord, RunMode, RunReport};

use super::convergence::{AsyncConvergence, AsyncDecision};
use super::{over_budget, throttled, AbortSignal, Backoff, RankAssignment, RuntimeError, RuntimeOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsyncConfig {
    /// Fixed relaxation factor.
    pub omega: f64,
    pub tol: f64,
    /// Cap on global solves.
    pub max_iterations: usize,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig {
            omega: 0.5,
            tol: 1e-7,
            max_iterations: 100_000,
        }
    }
}

impl AsyncConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(RuntimeError::Config(format!("omega must lie in (0, 2), got {}", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(RuntimeError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iterations == 0 {
            return Err(RuntimeError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) struct Channels {
    pub comm: Arc<Comm>,
    pub traces: Vec<Window>,
    pub reactions: Vec<Window>,
}

impl Channels {
    pub(crate) fn new(system: &CoupledSystem, assignment: &RankAssignment, options: &RuntimeOptions) -> Result<Self, RuntimeError> {
        let comm = Comm::new(assignment.num_ranks);
        comm.inject_latency(options.latency.clone());
        comm.set_fence_timeout(options.fence_timeout);
        let mut traces = Vec::new();
        let mut reactions = Vec::new();
        for s in 0..system.num_patches() {
            let size = payload_size(system.local(s).trace_len());
            traces.push(comm.win_create(&format!("trace/{s}"), 0, size)?);
            reactions.push(comm.win_create(&format!("reaction/{s}"), assignment.rank_of(s), size)?);
        }
        Ok(Channels { comm, traces, reactions })
    }
}

pub(crate) fn check_assignment(system: &CoupledSystem, assignment: &RankAssignment) -> Result<(), RuntimeError> {
    if assignment.num_patches() != system.num_patches() {
        return Err(RuntimeError::Assignment(format!(
            "assignment covers {} patches, system has {}",
            assignment.num_patches(),
            system.num_patches()
        )));
    }
    Ok(())
}

fn put_locked(w: &Window, rank: usize, bytes: &[u8]) -> Result<(), RuntimeError> {
    w.lock(rank, AccessMode::ExclusiveWrite)?;
    let res = w.put(rank, bytes).and_then(|_| w.flush(rank));
    w.unlock(rank)?;
    Ok(res?)
}

fn get_locked(w: &Window, rank: usize) -> Result<crate::asyncomm::Snapshot, RuntimeError> {
    w.lock(rank, AccessMode::SharedRead)?;
    let res = w.get(rank);
    w.unlock(rank)?;
    Ok(res?)
}

struct GlobalResult {
    global_iterations: usize,
    history: Vec<ResidualRecord>,
    converged: bool,
    rel: f64,
    warnings: Vec<String>,
    p: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    wall: Duration,
}

struct WorkerResult {
    rank: usize,
    /// (patch, solve count, last field)
    patches: Vec<(usize, usize, Vec<f64>)>,
    wall: Duration,
}

/// Asynchronous relaxed iteration: rank 0 updates the interface load from the
/// latest reactions it finds, patch ranks re-solve whenever a newer trace is
/// available. No rank ever waits for another except for lack of new data.
pub fn run_async(
    system: &CoupledSystem,
    assignment: &RankAssignment,
    config: &AsyncConfig,
    options: &RuntimeOptions,
) -> Result<CouplingOutcome, RuntimeError> {
    config.validate()?;
    options.validate()?;
    check_assignment(system, assignment)?;
    let ch = Channels::new(system, assignment, options)?;
    let stop = StopFlag::new(&ch.comm, "stop", 0)?;
    let abort = AbortSignal::default();
    let start = Instant::now();

    let (global, workers) = std::thread::scope(|scope| {
        let handles: Vec<_> = (1..assignment.num_ranks)
            .map(|rank| {
                let (ch, stop, abort) = (&ch, &stop, &abort);
                scope.spawn(move || {
                    let res = patch_worker(system, assignment, options, ch, stop, rank, start);
                    if res.is_err() {
                        abort.raise();
                    }
                    res
                })
            })
            .collect();
        let global = global_worker(system, config, options, &ch, &stop, &abort, start);
        if global.is_err() {
            abort.raise();
        }
        // make sure workers leave even when rank 0 failed
        let _ = stop.raise(0);
        let workers: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or(Err(RuntimeError::WorkerPanic(i + 1))))
            .collect();
        (global, workers)
    });
    let global = global?;
    let workers = workers.into_iter().collect::<Result<Vec<_>, _>>()?;

    let n = system.num_patches();
    let mut local_solves = vec![0; n];
    let mut local_fields = vec![Vec::new(); n];
    let mut rank_timings = vec![timing(&ch.comm, 0, global.wall)];
    for w in workers {
        rank_timings.push(timing(&ch.comm, w.rank, w.wall));
        for (s, count, field) in w.patches {
            local_solves[s] = count;
            local_fields[s] = field;
        }
    }
    let report = RunReport {
        mode: RunMode::Async,
        global_iterations: global.global_iterations,
        local_solves,
        wall_time: start.elapsed(),
        rank_timings,
        history: global.history,
        converged: global.converged,
        final_rel_residual: global.rel,
        warnings: global.warnings,
    };
    Ok(CouplingOutcome {
        report,
        p: global.p,
        u_global: global.u,
        local_fields,
        residual: global.r,
    })
}

pub(crate) fn timing(comm: &Comm, rank: usize, wall: Duration) -> RankTiming {
    let s = comm.stats(rank);
    RankTiming {
        rank,
        wall,
        comm: s.comm,
        wait: s.wait,
    }
}

fn global_worker(
    system: &CoupledSystem,
    config: &AsyncConfig,
    options: &RuntimeOptions,
    ch: &Channels,
    stop: &StopFlag,
    abort: &AbortSignal,
    start: Instant,
) -> Result<GlobalResult, RuntimeError> {
    let n = system.num_patches();
    let slow = options.compute_factor(0);
    let mut p = vec![0.0; system.interface_len()];
    let mut u = throttled(slow, || system.global_solve(&p))?;
    let mut global_iterations = 1usize;
    let mut trace_iter = 1u64;
    let publish = |u: &[f64], it: u64| -> Result<(), RuntimeError> {
        for s in 0..n {
            put_locked(&ch.traces[s], 0, &encode_payload(it, &system.trace(s, u)))?;
        }
        Ok(())
    };
    publish(&u, trace_iter)?;

    // iterates some patch may still answer, oldest first
    let mut pending: VecDeque<(u64, Vec<f64>)> = VecDeque::from([(trace_iter, u.clone())]);
    let mut reactions: Vec<Option<Vec<f64>>> = vec![None; n];
    // zone reaction at the iterate each reaction answered
    let mut zone_then: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut react_iter = vec![0u64; n];
    let mut seen = vec![0u64; n];
    let mut conv = AsyncConvergence::new(config.tol);
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let mut r = vec![0.0; p.len()];
    let mut r0: Option<f64> = None;
    let mut rel = f64::INFINITY;
    let mut converged = false;
    let mut backoff = Backoff::default();
    let mut last_progress = Instant::now();
    let mut stall_warned = false;

    loop {
        if abort.is_raised() {
            break;
        }
        if over_budget(start, options.max_wall) {
            warnings.push(format!("wall-clock budget of {:?} exhausted", options.max_wall.unwrap_or_default()));
            break;
        }
        let mut fresh = false;
        for s in 0..n {
            let snap = get_locked(&ch.reactions[s], 0)?;
            if snap.version > seen[s] {
                let (it, vals) = decode_payload(&snap.data)?;
                seen[s] = snap.version;
                react_iter[s] = it;
                reactions[s] = Some(vals);
                let (_, u_then) = pending
                    .iter()
                    .find(|(k, _)| *k == it)
                    .ok_or_else(|| RuntimeError::Config(format!("patch {s} answered unknown trace {it}")))?;
                zone_then[s] = system.zone_reaction(s, u_then);
                fresh = true;
            }
        }
        if !fresh {
            let t = Instant::now();
            backoff.snooze();
            ch.comm.record_wait(0, t.elapsed());
            if !stall_warned && last_progress.elapsed() > options.stall_timeout {
                let msg = format!("no reaction progress for {:?}; continuing", options.stall_timeout);
                log::warn!("{msg}");
                warnings.push(msg);
                stall_warned = true;
            }
            continue;
        }
        backoff.reset();
        last_progress = Instant::now();
        stall_warned = false;
        if reactions.iter().any(Option::is_none) {
            continue;
        }
        let lams: Vec<Vec<f64>> = reactions.iter().map(|x| x.clone().unwrap_or_default()).collect();
        r = system.residual(&lams, &system.complement_reaction(&u));
        // A stale reaction enters together with the coarse zone reaction of
        // the same iterate, so re-using it cannot accumulate into p.
        for s in (0..n).filter(|&s| react_iter[s] != trace_iter) {
            let now = system.zone_reaction(s, &u);
            let diff: Vec<f64> = zone_then[s].iter().zip(&now).map(|(a, b)| a - b).collect();
            system.scatter_add(s, &diff, &mut r);
        }
        let rn = norm(&r);
        let r0v = *r0.get_or_insert(rn);
        rel = if rn <= ABSOLUTE_FLOOR || r0v == 0.0 { 0.0 } else { rn / r0v };
        history.push(ResidualRecord {
            k: global_iterations,
            rel_residual: rel,
            omega: config.omega,
            t_seconds: start.elapsed().as_secs_f64(),
        });
        match conv.observe(rel, trace_iter, &react_iter) {
            AsyncDecision::Converged => {
                converged = true;
                break;
            }
            AsyncDecision::Hold => {
                // re-post the held trace so patches that answered an older
                // one see a publish after their last reaction
                publish(&u, trace_iter)?;
                continue;
            }
            AsyncDecision::Continue => {}
        }
        if global_iterations >= config.max_iterations {
            warnings.push(format!("global solve cap of {} reached", config.max_iterations));
            break;
        }
        richardson_update(&mut p, &r, config.omega);
        u = throttled(slow, || system.global_solve(&p))?;
        global_iterations += 1;
        trace_iter += 1;
        publish(&u, trace_iter)?;
        let oldest = react_iter.iter().copied().min().unwrap_or(0);
        pending.retain(|(k, _)| *k >= oldest);
        pending.push_back((trace_iter, u.clone()));
    }
    stop.raise(0)?;
    log::debug!("async global: {global_iterations} solves, rel {rel:e}, converged {converged}");
    Ok(GlobalResult {
        global_iterations,
        history,
        converged,
        rel,
        warnings,
        p,
        u,
        r,
        wall: start.elapsed(),
    })
}

fn patch_worker(
    system: &CoupledSystem,
    assignment: &RankAssignment,
    options: &RuntimeOptions,
    ch: &Channels,
    stop: &StopFlag,
    rank: usize,
    start: Instant,
) -> Result<WorkerResult, RuntimeError> {
    let owned = assignment.owned(rank);
    let slow = options.compute_factor(rank);
    let stalled = options.stalled_ranks.contains(&rank);
    // trace iteration last answered, trace window version just before that
    // put; any publish reacting to the put comes later
    let mut answered = vec![0u64; owned.len()];
    let mut version_at_put = vec![0u64; owned.len()];
    let mut counts = vec![0usize; owned.len()];
    let mut fields = vec![Vec::new(); owned.len()];
    let mut backoff = Backoff::default();
    loop {
        let mut worked = false;
        if !stalled {
            for (k, &s) in owned.iter().enumerate() {
                // a trace older than our last reaction cannot reflect it
                let snap = get_locked(&ch.traces[s], rank)?;
                if snap.version <= version_at_put[k] {
                    continue;
                }
                let (it, trace) = decode_payload(&snap.data)?;
                if it <= answered[k] {
                    continue;
                }
                let res = throttled(slow, || system.local_solve_trace(s, &trace))?;
                version_at_put[k] = get_locked(&ch.traces[s], rank)?.version;
                put_locked(&ch.reactions[s], rank, &encode_payload(it, &res.reaction))?;
                answered[k] = it;
                fields[k] = res.field;
                counts[k] += 1;
                worked = true;
            }
        }
        if worked {
            backoff.reset();
        } else {
            // the flag is only consulted when idle; a rank with work does it
            if stop.is_raised(rank)? {
                break;
            }
            let t = Instant::now();
            backoff.snooze();
            ch.comm.record_wait(rank, t.elapsed());
        }
    }
    Ok(WorkerResult {
        rank,
        patches: owned
            .into_iter()
            .zip(counts)
            .zip(fields)
            .map(|((s, c), f)| (s, c, f))
            .collect(),
        wall: start.elapsed(),
    })
}
