use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use glcouple_cli::{builtin_profiles, parse_config, parse_profiles, runner, Scenario};
use glcouple_core::runtime::AssignPolicy;

#[derive(Parser)]
#[command(name = "glcouple", version, about = "Global/local coupling runs and sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Output directory; overrides `[run] output`, default `results`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Switches to random patch assignment with this seed and reseeds latency.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Wall-clock cap per run.
    #[arg(long, global = true)]
    max_wall_seconds: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario once in its configured mode.
    Run { config: PathBuf },
    /// Sync-Aitken and async for each rank count.
    SweepRanks {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "9,17,33,65")]
        ranks: Vec<usize>,
    },
    /// Sync-Aitken and async under each load profile.
    SweepImbalance {
        config: PathBuf,
        /// Profile file; the built-in emulations when absent.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
}

fn load(path: &Path, common: &Common) -> Result<(Scenario, PathBuf)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = common.seed {
        sc.assignment = AssignPolicy::Random { seed };
        sc.latency.seed = seed;
    }
    if let Some(w) = common.max_wall_seconds {
        if !(w > 0.0) {
            bail!("--max-wall-seconds must be positive, got {w}");
        }
        sc.max_wall_seconds = Some(w);
    }
    let out = common.out.clone().or_else(|| sc.output.clone()).unwrap_or_else(|| "results".into());
    Ok((sc, out))
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => {
            let (sc, out) = load(config, &cli.common)?;
            let (row, report) = runner::run_scenario(&sc, &out)?;
            println!("{} {} ranks={}: {}", row.scenario_id, row.mode, row.ranks, report.table_cell());
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::SweepRanks { config, ranks } => {
            let (sc, out) = load(config, &cli.common)?;
            print!("{}", runner::sweep_ranks(&sc, ranks, &out)?.table());
        }
        Command::SweepImbalance { config, profiles } => {
            let (sc, out) = load(config, &cli.common)?;
            let profiles = match profiles {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    parse_profiles(&text).with_context(|| format!("in {}", p.display()))?
                }
                None => builtin_profiles(),
            };
            print!("{}", runner::sweep_imbalance(&sc, &profiles, &out)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
