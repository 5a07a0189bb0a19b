use std::time::Instant;

use crate::asyncomm::{decode_payload, encode_payload, Window};
use crate::coupling::{CoupledSystem, CouplingOutcome, Step, SyncConfig, SyncEngine};

use super::async_driver::{check_assignment, timing, Channels};
use super::{throttled, RankAssignment, RuntimeError, RuntimeOptions};

/// Synchronous iteration with fence-separated phases: rank 0 publishes
/// traces, workers answer with reactions, rank 0 updates. Numerically
/// identical to `coupling::run_synchronous`.
pub fn run_sync_distributed(
    system: &CoupledSystem,
    assignment: &RankAssignment,
    config: &SyncConfig,
    options: &RuntimeOptions,
) -> Result<CouplingOutcome, RuntimeError> {
    options.validate()?;
    check_assignment(system, assignment)?;
    let ch = Channels::new(system, assignment, options)?;
    let stop = ch.comm.win_create("stop", 0, 1)?;
    let start = Instant::now();
    let mut engine = SyncEngine::new(system, *config)?;

    let (global, workers) = std::thread::scope(|scope| {
        let handles: Vec<_> = (1..assignment.num_ranks)
            .map(|rank| {
                let (ch, stop) = (&ch, &stop);
                scope.spawn(move || worker(system, assignment, options, ch, stop, rank, start))
            })
            .collect();
        let global = leader(system, options, &ch, &stop, &mut engine);
        let workers: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or(Err(RuntimeError::WorkerPanic(i + 1))))
            .collect();
        (global, workers)
    });
    let (step, u) = global?;
    let wall0 = start.elapsed();
    let workers = workers.into_iter().collect::<Result<Vec<_>, _>>()?;

    let n = system.num_patches();
    let mut local_fields = vec![Vec::new(); n];
    let mut local_solves = vec![0; n];
    let mut rank_timings = vec![timing(&ch.comm, 0, wall0)];
    for (rank, wall, patches) in workers {
        rank_timings.push(timing(&ch.comm, rank, wall));
        for (s, count, field) in patches {
            local_solves[s] = count;
            local_fields[s] = field;
        }
    }
    let report = engine.report(step, local_solves, start.elapsed(), rank_timings);
    let state = engine.into_state();
    Ok(CouplingOutcome {
        report,
        p: state.p,
        u_global: u,
        local_fields,
        residual: state.r,
    })
}

fn all_windows<'a>(ch: &'a Channels, stop: &'a Window) -> Vec<&'a Window> {
    ch.traces.iter().chain(ch.reactions.iter()).chain(std::iter::once(stop)).collect()
}

fn leader(
    system: &CoupledSystem,
    options: &RuntimeOptions,
    ch: &Channels,
    stop: &Window,
    engine: &mut SyncEngine<'_>,
) -> Result<(Step, Vec<f64>), RuntimeError> {
    let wins = all_windows(ch, stop);
    let slow = options.compute_factor(0);
    let n = system.num_patches();
    ch.comm.fence(0, &wins)?;
    let mut k = 0u64;
    loop {
        k += 1;
        let u = throttled(slow, || engine.global_step())?;
        for s in 0..n {
            ch.traces[s].put(0, &encode_payload(k, &system.trace(s, &u)))?;
        }
        ch.comm.fence(0, &wins)?;
        ch.comm.fence(0, &wins)?;
        let mut reactions = Vec::with_capacity(n);
        for s in 0..n {
            let (_, vals) = decode_payload(&ch.reactions[s].get(0)?.data)?;
            reactions.push(vals);
        }
        let step = engine.absorb(&u, &reactions);
        if step != Step::Continue {
            stop.put(0, &[1])?;
            ch.comm.fence(0, &wins)?;
            return Ok((step, u));
        }
    }
}

type WorkerOut = (usize, std::time::Duration, Vec<(usize, usize, Vec<f64>)>);

fn worker(
    system: &CoupledSystem,
    assignment: &RankAssignment,
    options: &RuntimeOptions,
    ch: &Channels,
    stop: &Window,
    rank: usize,
    start: Instant,
) -> Result<WorkerOut, RuntimeError> {
    let wins = all_windows(ch, stop);
    let owned = assignment.owned(rank);
    let slow = options.compute_factor(rank);
    let mut counts = vec![0usize; owned.len()];
    let mut fields = vec![Vec::new(); owned.len()];
    ch.comm.fence(rank, &wins)?;
    loop {
        ch.comm.fence(rank, &wins)?;
        if stop.get(rank)?.data[0] == 1 {
            break;
        }
        for (k, &s) in owned.iter().enumerate() {
            let (it, trace) = decode_payload(&ch.traces[s].get(rank)?.data)?;
            let res = throttled(slow, || system.local_solve_trace(s, &trace))?;
            ch.reactions[s].put(rank, &encode_payload(it, &res.reaction))?;
            fields[k] = res.field;
            counts[k] += 1;
        }
        ch.comm.fence(rank, &wins)?;
    }
    let patches = owned
        .into_iter()
        .zip(counts)
        .zip(fields)
        .map(|((s, c), f)| (s, c, f))
        .collect();
    Ok((rank, start.elapsed(), patches))
}
