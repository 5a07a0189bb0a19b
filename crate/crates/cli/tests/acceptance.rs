//! Acceptance criteria, run in sequence with one PASS/FAIL line each.
//! Extra arguments filter criteria by substring.

use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use glcouple_cli::profiles::{LoadProfile, HOT_RANK};
use glcouple_cli::runner::{imbalance_table, sweep_imbalance};
use glcouple_cli::Scenario;
use glcouple_core::asyncomm::{AccessMode, Comm, Delay, LatencyModel};
use glcouple_core::coupling::{
    aitken_omega_unclamped, build_transfer, monolithic_reference, run_synchronous, CoupledSystem, ProblemSetup,
    SyncConfig, SyncMode,
};
use glcouple_core::fem::element::element_system;
use glcouple_core::fem::solver::norm;
use glcouple_core::fem::{apply_dirichlet, assemble, Physics, SolverKind};
use glcouple_core::mesh::{generate_patch_grid, GridSpec, MaterialField, Point};
use glcouple_core::runtime::{
    assign_patches, host_dilation, measure_comm_fraction, run_async, AssignPolicy, AsyncConfig, RuntimeOptions,
};
use glcouple_core::{RankTiming, RunMode, RunReport};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use regex::Regex;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

fn poisson_8() -> CoupledSystem {
    let grid = GridSpec::new(2, 2, 2).with_sizes(1.0, 0.25, 0.125);
    CoupledSystem::build(&ProblemSetup::poisson(grid)).unwrap()
}

fn monolithic_equivalence() -> Outcome {
    let t0 = Instant::now();
    let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.125).conforming(true);
    let setup = ProblemSetup::poisson(grid).with_contrast(100.0);
    let sys = CoupledSystem::build(&setup).map_err(|e| e.to_string())?;
    let out = run_synchronous(&sys, &SyncConfig::new(SyncMode::Aitken).with_tol(1e-10)).map_err(|e| e.to_string())?;
    let reference = monolithic_reference(&setup).map_err(|e| e.to_string())?;
    let err = reference.max_relative_error(&sys, &out.local_fields).map_err(|e| e.to_string())?;
    let t = t0.elapsed();
    check(
        out.report.converged && err < 1e-8 && t < Duration::from_secs(30),
        format!("{} iterations, max nodal rel. error {err:.2e}, {:.1}s", out.report.global_iterations, t.as_secs_f64()),
    )
}

fn sync_async_agreement() -> Outcome {
    let t0 = Instant::now();
    let sys = poisson_8();
    let sync = run_synchronous(&sys, &SyncConfig::new(SyncMode::Aitken).with_tol(1e-8)).map_err(|e| e.to_string())?;
    let cfg = AsyncConfig { tol: 1e-8, ..AsyncConfig::default() };
    let ten_ms = LatencyModel { default: Delay::fixed_ms(10.0), ..LatencyModel::zero() };
    let cases = [
        (AssignPolicy::Random { seed: 1 }, LatencyModel::zero()),
        (AssignPolicy::Random { seed: 2 }, LatencyModel::zero()),
        (AssignPolicy::Random { seed: 3 }, LatencyModel::zero()),
        (AssignPolicy::Random { seed: 1 }, ten_ms),
    ];
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (policy, latency) in cases {
        let a = assign_patches(8, 4, policy).map_err(|e| e.to_string())?;
        let opts = RuntimeOptions { latency, max_wall: Some(Duration::from_secs(60)), ..RuntimeOptions::default() };
        let out = run_async(&sys, &a, &cfg, &opts).map_err(|e| e.to_string())?;
        if !out.report.converged {
            return Err(format!("{policy:?}: not converged {:?}", out.report.warnings));
        }
        let d = rel_diff(&out.p, &sync.p);
        worst = worst.max(d);
        notes.push(out.report.table_cell());
    }
    let t = t0.elapsed();
    check(
        worst < 1e-6 && t < Duration::from_secs(120),
        format!("worst rel. difference {worst:.2e} over {} runs [{}], {:.1}s", notes.len(), notes.join("; "), t.as_secs_f64()),
    )
}

fn aitken_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for c in [0.5, -1.0, 0.9] {
        for omega in [1.0, 0.7, 1.3] {
            let r0 = [0.8, -1.7, 2.5];
            let r1 = r0.map(|v| c * v);
            let w = aitken_omega_unclamped(&r0, &r1, omega).map_err(|e| format!("{e:?}"))?;
            let want = omega / (1.0 - c);
            worst = worst.max((w - want).abs() / want.abs());
        }
    }
    if worst >= 1e-12 {
        return Err(format!("geometric sequences: worst rel. error {worst:.2e}"));
    }
    // Δ²: ω_new/ω_prev is the step minimising ‖r_prev + t (r − r_prev)‖
    let mut runner = TestRunner::deterministic();
    let pair = (proptest::collection::vec(-1.0f64..1.0, 12), proptest::collection::vec(-1.0f64..1.0, 12), 0.2f64..1.8);
    let step = 1e-4;
    let mut worst_t = 0.0f64;
    for _ in 0..10 {
        let (a, b, omega) = pair.new_tree(&mut runner).unwrap().current();
        let w = aitken_omega_unclamped(&a, &b, omega).map_err(|e| format!("{e:?}"))?;
        let phi = |t: f64| norm(&a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect::<Vec<_>>());
        let t_star = w / omega;
        let lo = t_star.floor() - 2.0;
        let t_grid = (0..=((5.0 / step) as usize))
            .map(|i| lo + i as f64 * step)
            .min_by(|x, y| phi(*x).total_cmp(&phi(*y)))
            .unwrap();
        if phi(t_star) > phi(t_grid) + 1e-12 {
            return Err(format!("grid point {t_grid} beats {t_star}"));
        }
        worst_t = worst_t.max((t_grid - t_star).abs());
    }
    check(
        worst_t <= step,
        format!("geometric rel. error {worst:.1e}; argmin within {worst_t:.1e} of the grid optimum on 10 pairs"),
    )
}

fn aitken_vs_fixed() -> Outcome {
    let grid = GridSpec::new(2, 2, 2).with_sizes(1.0, 0.25, 0.125);
    let sys = CoupledSystem::build(&ProblemSetup::elasticity(grid).with_contrast(100.0)).map_err(|e| e.to_string())?;
    let fixed = run_synchronous(&sys, &SyncConfig::new(SyncMode::FixedOmega).with_omega(1.0)).map_err(|e| e.to_string())?;
    let aitken = run_synchronous(&sys, &SyncConfig::new(SyncMode::Aitken)).map_err(|e| e.to_string())?;
    let (nf, na) = (fixed.report.global_iterations, aitken.report.global_iterations);
    let order = if nf > 30 { na < nf } else { na <= nf };
    let conv = fixed.report.converged
        && aitken.report.converged
        && fixed.report.final_rel_residual < 1e-7
        && aitken.report.final_rel_residual < 1e-7;
    check(
        order && conv,
        format!(
            "aitken {na} ({:.1e}) vs fixed 1.0 {nf} ({:.1e})",
            aitken.report.final_rel_residual, fixed.report.final_rel_residual
        ),
    )
}

fn imbalance_advantage() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sc = Scenario::new(2, 2, 2);
    sc.id = "imbalance".into();
    sc.setup = ProblemSetup::elasticity(GridSpec::new(2, 2, 2).with_sizes(1.0, 0.25, 0.1));
    sc.ranks = 9;
    sc.omega = Some(1.0);
    sc.max_wall_seconds = Some(120.0);
    let profile = LoadProfile {
        name: "one-slow".into(),
        note: format!("emulation: rank {HOT_RANK} computes 10x slower, {}x dilation", host_dilation(9)),
        latency: LatencyModel::zero(),
        slowdown: vec![(HOT_RANK, 10.0)],
    };
    let sweep = sweep_imbalance(&sc, std::slice::from_ref(&profile), dir.path()).map_err(|e| e.to_string())?;
    let (_, sync, asy) = &sweep.tables[0];
    let table = imbalance_table(&profile, sync, asy);
    let layout = ["Time(s) |", "Async. #iter. glob. |", "Async. #loc. sol. [min, max] |"]
        .iter()
        .all(|row| table.lines().any(|l| l.starts_with(row)));
    let (sync, asy) = (sync.as_ref().map_err(String::clone)?, asy.as_ref().map_err(String::clone)?);
    let (ts, ta) = (sync.wall_time.as_secs_f64(), asy.wall_time.as_secs_f64());
    let detail = format!(
        "sync-aitken {} ({ts:.2}s) vs async {} ({ta:.2}s); layout rows {}",
        sync.global_iterations,
        asy.table_cell(),
        if layout { "present" } else { "missing" }
    );
    for l in table.lines() {
        println!("    {l}");
    }
    check(layout && sync.converged && asy.converged && ta < ts, detail)
}

fn sweep_count_inequality() -> Outcome {
    let sys = poisson_8();
    let sync = run_synchronous(&sys, &SyncConfig::new(SyncMode::FixedOmega).with_omega(1.0)).map_err(|e| e.to_string())?;
    let a = assign_patches(8, 9, AssignPolicy::Block).map_err(|e| e.to_string())?;
    let cfg = AsyncConfig { omega: 1.0, ..AsyncConfig::default() };
    let run = |latency: LatencyModel| {
        let opts = RuntimeOptions { latency, max_wall: Some(Duration::from_secs(60)), ..RuntimeOptions::default() };
        run_async(&sys, &a, &cfg, &opts).map_err(|e| e.to_string())
    };
    let flat = run(LatencyModel::zero())?.report;
    let hot = run(LatencyModel::zero().with_rank(HOT_RANK, Delay::fixed_ms(20.0)))?.report;
    let spread = |r: &RunReport| r.loc_max() as f64 / r.loc_min().max(1) as f64;
    let ok = flat.converged
        && hot.converged
        && flat.global_iterations >= sync.report.global_iterations
        && hot.global_iterations >= sync.report.global_iterations
        && hot.loc_max() >= 2 * hot.loc_min()
        && spread(&hot) > spread(&flat);
    check(
        ok,
        format!(
            "sync {} at omega 1; async {} flat, {} with rank {HOT_RANK} at 20 ms",
            sync.report.global_iterations,
            flat.table_cell(),
            hot.table_cell()
        ),
    )
}

fn seqlock_integrity() -> Outcome {
    const WORDS: usize = 32;
    let t0 = Instant::now();
    let puts = 100_000u64;
    let comm = Comm::new(5);
    let w = comm.win_create("stress", 0, WORDS * 8).map_err(|e| e.to_string())?;
    let done = AtomicBool::new(false);
    let (torn, reads, regress) = std::thread::scope(|scope| {
        let readers: Vec<_> = (1..5)
            .map(|rank| {
                let (w, done) = (&w, &done);
                scope.spawn(move || {
                    let (mut torn, mut reads, mut regress, mut last) = (0usize, 0usize, 0usize, 0u64);
                    while !done.load(Ordering::Acquire) {
                        w.lock(rank, AccessMode::SharedRead).unwrap();
                        let snap = w.get(rank).unwrap();
                        w.unlock(rank).unwrap();
                        regress += usize::from(snap.version < last || snap.version % 2 == 1);
                        last = snap.version;
                        let first = &snap.data[..8];
                        torn += usize::from(snap.data.chunks(8).any(|c| c != first));
                        reads += 1;
                        std::thread::yield_now();
                    }
                    (torn, reads, regress)
                })
            })
            .collect();
        for i in 1..=puts {
            let data: Vec<u8> = (0..WORDS).flat_map(|_| i.to_le_bytes()).collect();
            w.lock(0, AccessMode::ExclusiveWrite).unwrap();
            w.put(0, &data).unwrap();
            w.unlock(0).unwrap();
        }
        done.store(true, Ordering::Release);
        readers.into_iter().map(|h| h.join().unwrap()).fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    });
    let t = t0.elapsed();
    check(
        torn == 0 && regress == 0 && reads > 0 && w.version() == 2 * puts && t < Duration::from_secs(60),
        format!("{puts} puts, {reads} reads: {torn} torn, {regress} version regressions, {:.1}s", t.as_secs_f64()),
    )
}

fn submodeling_identity() -> Outcome {
    let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.125);
    let sys = CoupledSystem::build(&ProblemSetup::poisson(grid).with_contrast(100.0)).map_err(|e| e.to_string())?;
    let sub = run_synchronous(&sys, &SyncConfig::new(SyncMode::Submodeling)).map_err(|e| e.to_string())?;
    let first = run_synchronous(&sys, &SyncConfig::new(SyncMode::FixedOmega).with_max_iterations(1))
        .map_err(|e| e.to_string())?;
    let same = sub.local_fields == first.local_fields && sub.u_global == first.u_global;
    let rn = norm(&sub.residual);
    check(
        same && rn > 0.0 && sub.report.global_iterations == 1,
        format!("fields identical: {same}; interface residual {rn:.3e} (rel. {:.3e})", sub.report.final_rel_residual),
    )
}

fn fem_identities() -> Outcome {
    // reaction sum on a clamped box
    let d = generate_patch_grid(&GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.25)).map_err(|e| e.to_string())?;
    let g = d.global();
    let mat = MaterialField::homogeneous(g.num_elements(), 1.0);
    let prob = assemble(g, &Physics::poisson(), &mat, None).map_err(|e| e.to_string())?;
    let fixed: Vec<usize> = (0..g.num_nodes()).filter(|&n| d.global_on_boundary(n)).collect();
    let cons: Vec<(usize, f64)> = fixed.iter().map(|&n| (n, 0.0)).collect();
    let u = apply_dirichlet(&prob, &cons)
        .and_then(|r| r.solve(SolverKind::Direct))
        .map_err(|e| e.to_string())?;
    let sum: f64 = prob.reaction(&u, &fixed).map_err(|e| e.to_string())?.iter().sum();
    let reaction_err = (sum + 2.0).abs() / 2.0;

    // element rows on a distorted hexahedron
    let hex: Vec<Point> = g
        .element_coords(0)
        .iter()
        .map(|x| [x[0] + 0.05 * x[1] * x[2] * 16.0, x[1] - 0.03 * x[0] * 4.0, x[2] + 0.02 * x[0] * x[1] * 16.0])
        .collect();
    let (kp, _) = element_system(3, &hex, &Physics::poisson(), 0).map_err(|e| e.to_string())?;
    let mut row_dev = (0..8).map(|r| kp[r * 8..r * 8 + 8].iter().sum::<f64>().abs()).fold(0.0, f64::max);
    let (ke, _) = element_system(3, &hex, &Physics::elasticity(3), 0).map_err(|e| e.to_string())?;
    for r in 0..24 {
        for comp in 0..3 {
            let s: f64 = (0..8).map(|n| ke[r * 24 + n * 3 + comp]).sum();
            row_dev = row_dev.max(s.abs());
        }
    }

    // transfer rows and linear reproduction on non-matching layouts
    let field = |x: Point| 1.5 * x[0] - 0.7 * x[1] + 0.3 * x[2] + 2.0;
    let (mut sum_dev, mut lin_dev, mut rows) = (0.0f64, 0.0f64, 0usize);
    for spec in [
        GridSpec::new(2, 2, 2).with_sizes(1.0, 0.5, 0.2),
        GridSpec::new(3, 1, 2).with_sizes(1.0, 1.0 / 3.0, 0.25),
        GridSpec::new(2, 2, 2).with_sizes(1.0, 0.5, 0.125).with_patched([0, 3, 5]),
    ] {
        let d = generate_patch_grid(&spec).map_err(|e| e.to_string())?;
        for p in d.patches() {
            let j = build_transfer(&p.interface, d.global(), &p.fine).map_err(|e| e.to_string())?;
            for i in 0..j.nrows() {
                sum_dev = sum_dev.max((j.row(i).iter().map(|e| e.1).sum::<f64>() - 1.0).abs());
            }
            let gv: Vec<f64> = p.interface.global_iface_nodes.iter().map(|&n| field(d.global().node(n))).collect();
            let fv = j.apply(&gv, 1);
            for (k, &n) in p.interface.fine_iface_nodes.iter().enumerate() {
                lin_dev = lin_dev.max((fv[k] - field(p.fine.node(n))).abs());
            }
            rows += j.nrows();
        }
    }
    check(
        reaction_err < 1e-10 && row_dev < 1e-12 && sum_dev < 1e-12 && lin_dev < 1e-12,
        format!(
            "reaction sum rel. err {reaction_err:.1e}; element row sums {row_dev:.1e}; {rows} transfer rows: sum dev {sum_dev:.1e}, linear dev {lin_dev:.1e}"
        ),
    )
}

fn busy(n: u64) -> u64 {
    (0..n).fold(0u64, |a, i| a.wrapping_mul(31).wrapping_add(i ^ (a >> 3)))
}

fn communication_accounting() -> Outcome {
    let comm = Comm::new(2);
    comm.inject_latency(LatencyModel::zero().with_rank(0, Delay::fixed_ms(100.0)));
    let c = comm.clone();
    let peer = std::thread::spawn(move || {
        for _ in 0..3 {
            c.fence(0, &[]).unwrap();
        }
    });
    let t0 = Instant::now();
    for _ in 0..3 {
        comm.fence(1, &[]).map_err(|e| e.to_string())?;
    }
    let s = comm.stats(1);
    let fenced = measure_comm_fraction(&RankTiming { rank: 1, wall: t0.elapsed(), comm: s.comm, wait: s.wait });
    peer.join().unwrap();

    let solo = Comm::new(1);
    let t0 = Instant::now();
    std::hint::black_box(busy(30_000_000));
    let s = solo.stats(0);
    let compute = measure_comm_fraction(&RankTiming { rank: 0, wall: t0.elapsed(), comm: s.comm, wait: s.wait });

    let report = RunReport {
        mode: RunMode::Async,
        global_iterations: 334,
        local_solves: vec![49, 54, 51],
        wall_time: Duration::from_millis(12_340),
        rank_timings: vec![RankTiming {
            rank: 0,
            wall: Duration::from_secs(10),
            comm: Duration::from_secs(3),
            wait: Duration::from_secs(1),
        }],
        history: Vec::new(),
        converged: true,
        final_rel_residual: 1e-8,
        warnings: Vec::new(),
    };
    let cell = report.table_cell();
    let sync_cell = RunReport { mode: RunMode::Aitken, global_iterations: 25, ..report }.table_cell();
    let re = Regex::new(r"^\d+\[\d+, \d+\] & \d+\.\d{2}s\[\d+%\]$").unwrap();
    let format_ok = cell == "334[49, 54] & 12.34s[40%]" && re.is_match(&cell) && sync_cell == "25 & 12.34s[40%]";
    check(
        fenced > 0.9 && compute < 0.02 && format_ok,
        format!("fence-bound {fenced:.3}, compute-only {compute:.4}, cells `{cell}` and `{sync_cell}`"),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("monolithic equivalence", monolithic_equivalence),
        ("sync/async fixed-point agreement", sync_async_agreement),
        ("aitken oracle", aitken_oracle),
        ("aitken vs fixed relaxation", aitken_vs_fixed),
        ("imbalance advantage", imbalance_advantage),
        ("sweep-count inequality", sweep_count_inequality),
        ("seqlock integrity", seqlock_integrity),
        ("submodeling identity", submodeling_identity),
        ("fem identities", fem_identities),
        ("communication accounting", communication_accounting),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                println!("FAIL {name} ({secs:.1}s): {d}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}
