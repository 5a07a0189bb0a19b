//! Named machine-load profiles for the imbalance sweep. Every profile is an
//! emulation: latency on window operations plus optional compute slowdown.
//!
//! Profile files hold one section per profile:
//!
//! ```text
//! [packed-hot]
//! note = one overloaded machine
//! default = uniform:0.5,1.5
//! rank.1 = uniform:5,15
//! slow.1 = 10
//! ```

use glcouple_core::asyncomm::{Delay, LatencyModel};

use crate::config::{parse_delay, read_load, read_sections, ConfigError, Reader};

#[derive(Clone, Debug, PartialEq)]
pub struct LoadProfile {
    pub name: String,
    pub note: String,
    pub latency: LatencyModel,
    pub slowdown: Vec<(usize, f64)>,
}

/// Rank that the built-in hot profile overloads.
pub const HOT_RANK: usize = 1;

/// `balanced`: no injected load. `spread-thin`: moderate latency on every
/// rank, as when the ranks are spread over many machines. `packed-hot`: one
/// rank ten times slower in compute and latency, as when it shares an
/// overloaded machine.
pub fn builtin_profiles() -> Vec<LoadProfile> {
    vec![
        LoadProfile {
            name: "balanced".into(),
            note: "emulation: no injected latency or slowdown".into(),
            latency: LatencyModel::zero(),
            slowdown: Vec::new(),
        },
        LoadProfile {
            name: "spread-thin".into(),
            note: "emulation: ranks on many machines, uniform 2-6 ms per window operation".into(),
            latency: LatencyModel::uniform(Delay::uniform_ms(2.0, 6.0), 11),
            slowdown: Vec::new(),
        },
        LoadProfile {
            name: "packed-hot".into(),
            note: format!("emulation: rank {HOT_RANK} on an overloaded machine, 10x compute and latency"),
            latency: LatencyModel::uniform(Delay::uniform_ms(0.5, 1.5), 13).with_rank(HOT_RANK, Delay::uniform_ms(5.0, 15.0)),
            slowdown: vec![(HOT_RANK, 10.0)],
        },
    ]
}

pub fn parse_profiles(text: &str) -> Result<Vec<LoadProfile>, ConfigError> {
    let sections = read_sections(text, None)?;
    let names: Vec<String> = sections.iter().map(|s| s.name.clone()).collect();
    let mut r = Reader { sections };
    let mut out = Vec::new();
    for name in names {
        let note = r.take(&name, "note").map_or_else(|| "emulation".to_string(), |(v, _)| v);
        let mut latency = LatencyModel::zero();
        if let Some((seed, _)) = r.parsed(&name, "seed", "an unsigned integer", |v| v.parse::<u64>().ok())? {
            latency.seed = seed;
        }
        if let Some((d, _)) = r.parsed(&name, "default", "zero, fixed:<ms> or uniform:<lo>,<hi>", parse_delay)? {
            latency.default = d;
        }
        let (per_rank, slowdown) = read_load(&mut r.indexed(&name, "rank"), &mut r.indexed(&name, "slow"))?;
        latency.per_rank = per_rank;
        out.push(LoadProfile {
            name,
            note,
            latency,
            slowdown,
        });
    }
    r.reject_unused()?;
    if out.is_empty() {
        return Err(ConfigError::Scenario("profile file defines no profiles".into()));
    }
    Ok(out)
}
