//! Scenario files: `key = value` lines grouped under `[grid]`, `[physics]`,
//! `[run]` and `[latency]`, `#` comments.
//!
//! ```text
//! [grid]
//! nx = 2
//! ny = 2
//! nz = 2
//! h_global = 0.25
//!
//! [physics]
//! kind = elasticity
//!
//! [run]
//! mode = async
//! ranks = 9
//!
//! [latency]
//! default = uniform:0.5,1.5
//! rank.3 = fixed:10
//! slow.3 = 10
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use glcouple_core::asyncomm::{Delay, LatencyModel};
use glcouple_core::coupling::ProblemSetup;
use glcouple_core::fem::{Physics, PhysicsKind, SolverKind};
use glcouple_core::mesh::{GridSpec, PatchedCells};
use glcouple_core::runtime::AssignPolicy;
use glcouple_core::RunMode;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: `{key}`: expected {expected}, got `{value}`")]
    Type {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Execution path for synchronous modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Driver {
    /// Plain loop in the calling thread.
    InProcess,
    /// One thread per rank exchanging through fenced windows.
    Distributed,
}

impl Driver {
    pub fn name(self) -> &'static str {
        match self {
            Driver::InProcess => "inprocess",
            Driver::Distributed => "distributed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub setup: ProblemSetup,
    pub mode: RunMode,
    pub driver: Driver,
    /// `None`: 1 for synchronous modes, 0.5 for async.
    pub omega: Option<f64>,
    pub tol: f64,
    /// Cap on global solves. `None`: 500 for synchronous modes, 100000 for
    /// async, whose sweeps are cheaper and more numerous.
    pub max_iterations: Option<usize>,
    pub ranks: usize,
    pub assignment: AssignPolicy,
    pub latency: LatencyModel,
    /// `(rank, factor)` compute slowdowns.
    pub slowdown: Vec<(usize, f64)>,
    /// `None`: ranks / cores of this host.
    pub dilation: Option<f64>,
    pub max_wall_seconds: Option<f64>,
    pub output: Option<PathBuf>,
}

impl Scenario {
    /// Defaults for everything but the grid.
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Scenario {
            id: "scenario".into(),
            setup: ProblemSetup::poisson(GridSpec::new(nx, ny, nz)),
            mode: RunMode::Aitken,
            driver: Driver::InProcess,
            omega: None,
            tol: 1e-7,
            max_iterations: None,
            ranks: 2,
            assignment: AssignPolicy::Block,
            latency: LatencyModel::zero(),
            slowdown: Vec::new(),
            dilation: None,
            max_wall_seconds: None,
            output: None,
        }
    }

    pub fn effective_omega(&self) -> f64 {
        self.omega.unwrap_or(if self.mode == RunMode::Async { 0.5 } else { 1.0 })
    }

    pub fn effective_max_iterations(&self) -> usize {
        self.max_iterations.unwrap_or(if self.mode == RunMode::Async { 100_000 } else { 500 })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Scenario(m));
        self.setup.validate().map_err(|e| ConfigError::Scenario(e.to_string()))?;
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        let w = self.effective_omega();
        if !(w > 0.0 && w < 2.0) {
            return bad(format!("omega must lie in (0, 2), got {w}"));
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be >= 1".into());
        }
        if self.ranks < 2 {
            return bad(format!("ranks must be >= 2, got {}", self.ranks));
        }
        if let Some((r, f)) = self.slowdown.iter().find(|(_, f)| !(*f >= 1.0 && f.is_finite())) {
            return bad(format!("slowdown of rank {r} must be >= 1, got {f}"));
        }
        if let Some(d) = self.dilation.filter(|d| !(*d >= 1.0 && d.is_finite())) {
            return bad(format!("dilation must be >= 1, got {d}"));
        }
        if let Some(s) = self.max_wall_seconds.filter(|s| !(*s > 0.0 && s.is_finite())) {
            return bad(format!("max_wall_seconds must be positive, got {s}"));
        }
        if self.id.is_empty() || self.id.chars().any(|c| c.is_whitespace() || c == '#' || c == '/') {
            return bad(format!("id `{}` must be non-empty without spaces, `#` or `/`", self.id));
        }
        Ok(())
    }
}

pub(crate) struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}


pub(crate) struct Section {
    pub(crate) name: String,
    entries: Vec<Entry>,
}

fn strip_comment(line: &str) -> &str {
    // `#` opens a comment at line start or after whitespace
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// `known`: allowed section names, or `None` for any.
pub(crate) fn read_sections(text: &str, known: Option<&[&str]>) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = strip_comment(raw).trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("unterminated section header `{s}`") })?
                .trim();
            if name.is_empty() || known.is_some_and(|k| !k.contains(&name)) {
                return Err(ConfigError::UnknownSection { line, section: name.into() });
            }
            if sections.iter().any(|x| x.name == name) {
                return Err(ConfigError::Syntax { line, msg: format!("section [{name}] repeated") });
            }
            sections.push(Section { name: name.into(), entries: Vec::new() });
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{s}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, msg: "empty key".into() });
        }
        let sec = sections
            .last_mut()
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("`{key}` appears before any section") })?;
        if sec.entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate { line, key: key.into() });
        }
        sec.entries.push(Entry {
            key: key.into(),
            value: value.into(),
            line,
            used: false,
        });
    }
    Ok(sections)
}

/// Typed, usage-tracking view over the parsed sections.
pub(crate) struct Reader {
    pub(crate) sections: Vec<Section>,
}

impl Reader {
    pub(crate) fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let sec = self.sections.iter_mut().find(|s| s.name == section)?;
        let e = sec.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    pub(crate) fn parsed<T>(
        &mut self,
        section: &str,
        key: &str,
        expected: &'static str,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<(T, usize)>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => f(&v).map(|x| Some((x, line))).ok_or(ConfigError::Type {
                line,
                key: key.into(),
                expected,
                value: v,
            }),
        }
    }

    pub(crate) fn f64(&mut self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        Ok(self.parsed(section, key, "a number", |v| v.parse().ok())?.map(|x| x.0))
    }

    pub(crate) fn usize(&mut self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        Ok(self.parsed(section, key, "a non-negative integer", |v| v.parse().ok())?.map(|x| x.0))
    }

    /// Entries `prefix.N`, marked used.
    pub(crate) fn indexed(&mut self, section: &str, prefix: &str) -> Vec<(usize, String, usize, String)> {
        let Some(sec) = self.sections.iter_mut().find(|s| s.name == section) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for e in sec.entries.iter_mut() {
            if let Some(idx) = e.key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                if let Ok(n) = idx.parse() {
                    e.used = true;
                    out.push((n, e.value.clone(), e.line, e.key.clone()));
                }
            }
        }
        out
    }

    pub(crate) fn reject_unused(&self) -> Result<(), ConfigError> {
        for s in &self.sections {
            if let Some(e) = s.entries.iter().find(|e| !e.used) {
                return Err(ConfigError::UnknownKey {
                    line: e.line,
                    section: s.name.clone(),
                    key: e.key.clone(),
                });
            }
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// Milliseconds as a plain number (`10`, `2.5`, `10ms`) or with a unit
/// suffix `s`, `us`, `ns`.
fn parse_duration(v: &str) -> Option<Duration> {
    let v = v.trim();
    let (num, scale) = if let Some(x) = v.strip_suffix("ns") {
        (x, 1.0)
    } else if let Some(x) = v.strip_suffix("us") {
        (x, 1e3)
    } else if let Some(x) = v.strip_suffix("ms") {
        (x, 1e6)
    } else if let Some(x) = v.strip_suffix('s') {
        (x, 1e9)
    } else {
        (v, 1e6)
    };
    let x: f64 = num.trim().parse().ok()?;
    let ns = (x * scale).round();
    (x.is_finite() && ns >= 0.0 && ns < u64::MAX as f64).then(|| Duration::from_nanos(ns as u64))
}

fn format_duration(d: Duration) -> String {
    let ns = d.as_nanos();
    if ns % 1_000_000 == 0 {
        format!("{}ms", ns / 1_000_000)
    } else {
        format!("{ns}ns")
    }
}

/// `zero`, `fixed:<d>`, `uniform:<lo>,<hi>`.
pub fn parse_delay(v: &str) -> Option<Delay> {
    let v = v.trim();
    if v == "zero" {
        return Some(Delay::Zero);
    }
    if let Some(d) = v.strip_prefix("fixed:") {
        return parse_duration(d).map(Delay::Fixed);
    }
    let (lo, hi) = v.strip_prefix("uniform:")?.split_once(',')?;
    let (lo, hi) = (parse_duration(lo)?, parse_duration(hi)?);
    (lo <= hi).then_some(Delay::Uniform(lo, hi))
}

pub fn format_delay(d: &Delay) -> String {
    match d {
        Delay::Zero => "zero".into(),
        Delay::Fixed(x) => format!("fixed:{}", format_duration(*x)),
        Delay::Uniform(lo, hi) => format!("uniform:{},{}", format_duration(*lo), format_duration(*hi)),
    }
}

/// Latency and slowdown entries shared by `[latency]` and profile files.
pub(crate) fn read_load(
    entries: &mut [(usize, String, usize, String)],
    slow: &mut [(usize, String, usize, String)],
) -> Result<(Vec<(usize, Delay)>, Vec<(usize, f64)>), ConfigError> {
    entries.sort_by_key(|e| e.0);
    slow.sort_by_key(|e| e.0);
    let mut per_rank = Vec::new();
    for (rank, v, line, key) in entries.iter() {
        let d = parse_delay(v).ok_or_else(|| ConfigError::Type {
            line: *line,
            key: key.clone(),
            expected: "zero, fixed:<ms> or uniform:<lo>,<hi>",
            value: v.clone(),
        })?;
        per_rank.push((*rank, d));
    }
    let mut slowdown = Vec::new();
    for (rank, v, line, key) in slow.iter() {
        let f: f64 = v.parse().ok().filter(|f: &f64| *f >= 1.0 && f.is_finite()).ok_or_else(|| ConfigError::Type {
            line: *line,
            key: key.clone(),
            expected: "a factor >= 1",
            value: v.clone(),
        })?;
        slowdown.push((*rank, f));
    }
    Ok((per_rank, slowdown))
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let mut r = Reader {
        sections: read_sections(text, Some(&["grid", "physics", "run", "latency"]))?,
    };

    let mut missing = Vec::new();
    let mut dims = [0usize; 3];
    for (d, key) in ["nx", "ny", "nz"].iter().enumerate() {
        match r.usize("grid", key)? {
            Some(v) => dims[d] = v,
            None => missing.push(format!("[grid] {key}")),
        }
    }
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let mut sc = Scenario::new(dims[0], dims[1], dims[2]);
    let g = &mut sc.setup.grid;
    if let Some(v) = r.f64("grid", "patch_side")? {
        g.patch_side = v;
    }
    if let Some(v) = r.f64("grid", "h_global")? {
        g.h_global = v;
    }
    if let Some(v) = r.f64("grid", "h_fine")? {
        g.h_fine = v;
    }
    if let Some((v, _)) = r.parsed("grid", "conforming", "true or false", parse_bool)? {
        g.conforming_interfaces = v;
    }
    if let Some((v, _)) = r.parsed("grid", "patched", "`all` or a list of cell ids", |v| {
        if v == "all" {
            Some(PatchedCells::All)
        } else if v == "none" {
            Some(PatchedCells::Subset(BTreeSet::new()))
        } else {
            parse_list::<usize>(v).map(|l| PatchedCells::Subset(l.into_iter().collect()))
        }
    })? {
        g.patched_cells = v;
    }

    let dim = sc.setup.grid.dim();
    if let Some((kind, _)) = r.parsed("physics", "kind", "poisson or elasticity", |v| match v {
        "poisson" => Some(PhysicsKind::Poisson),
        "elasticity" => Some(PhysicsKind::Elasticity),
        _ => None,
    })? {
        sc.setup.physics = match kind {
            PhysicsKind::Poisson => Physics::poisson(),
            PhysicsKind::Elasticity => Physics::elasticity(dim),
        };
    }
    if let Some((v, line)) = r.parsed("physics", "poisson_ratio", "a number", |v| v.parse::<f64>().ok())? {
        if sc.setup.physics.kind != PhysicsKind::Elasticity {
            return Err(ConfigError::Invalid { line, msg: "poisson_ratio needs kind = elasticity".into() });
        }
        sc.setup.physics.poisson_ratio = v;
    }
    if let Some(v) = r.f64("physics", "contrast")? {
        sc.setup.contrast = v;
    }
    if let Some(v) = r.f64("physics", "matrix_value")? {
        sc.setup.matrix_value = v;
    }
    if let Some(v) = r.f64("physics", "inclusion_radius")? {
        sc.setup.inclusion_radius = Some(v);
    }
    if let Some((v, _)) = r.parsed("physics", "inclusion_offset", "three comma-separated numbers", |v| {
        parse_list::<f64>(v).filter(|l| l.len() == 3)
    })? {
        sc.setup.inclusion_offset = [v[0], v[1], v[2]];
    }
    if let Some((v, _)) = r.parsed("physics", "solver", "direct or cg[:tol]", |v| match v {
        "direct" => Some(SolverKind::Direct),
        "cg" => Some(SolverKind::cg()),
        _ => v
            .strip_prefix("cg:")
            .and_then(|t| t.parse().ok())
            .map(|tol| SolverKind::ConjugateGradient { tol }),
    })? {
        sc.setup.solver = v;
    }

    if let Some((v, _)) = r.parsed("run", "id", "a name", |v| Some(v.to_string()))? {
        sc.id = v;
    }
    if let Some((v, _)) = r.parsed("run", "mode", "fixed, aitken, submodeling or async", RunMode::parse)? {
        sc.mode = v;
    }
    if let Some((v, _)) = r.parsed("run", "driver", "inprocess or distributed", |v| match v {
        "inprocess" => Some(Driver::InProcess),
        "distributed" => Some(Driver::Distributed),
        _ => None,
    })? {
        sc.driver = v;
    }
    if let Some(v) = r.f64("run", "omega")? {
        sc.omega = Some(v);
    }
    if let Some(v) = r.f64("run", "tol")? {
        sc.tol = v;
    }
    if let Some(v) = r.usize("run", "max_iterations")? {
        sc.max_iterations = Some(v);
    }
    if let Some(v) = r.usize("run", "ranks")? {
        sc.ranks = v;
    }
    let policy = r.parsed("run", "assignment", "block or random", |v| match v {
        "block" | "random" => Some(v.to_string()),
        _ => None,
    })?;
    let seed = r.parsed("run", "seed", "an unsigned integer", |v| v.parse::<u64>().ok())?;
    sc.assignment = match (policy.as_ref().map(|p| p.0.as_str()), seed) {
        (Some("random"), s) => AssignPolicy::Random { seed: s.map_or(0, |x| x.0) },
        (_, Some((_, line))) => {
            return Err(ConfigError::Invalid { line, msg: "seed needs assignment = random".into() });
        }
        _ => AssignPolicy::Block,
    };
    if let Some((v, _)) = r.parsed("run", "dilation", "`auto` or a factor >= 1", |v| {
        if v == "auto" {
            Some(None)
        } else {
            v.parse::<f64>().ok().map(Some)
        }
    })? {
        sc.dilation = v;
    }
    if let Some(v) = r.f64("run", "max_wall_seconds")? {
        sc.max_wall_seconds = Some(v);
    }
    if let Some((v, _)) = r.parsed("run", "output", "a path", |v| Some(PathBuf::from(v)))? {
        sc.output = Some(v);
    }

    if let Some((v, _)) = r.parsed("latency", "seed", "an unsigned integer", |v| v.parse::<u64>().ok())? {
        sc.latency.seed = v;
    }
    if let Some((v, _)) = r.parsed("latency", "default", "zero, fixed:<ms> or uniform:<lo>,<hi>", parse_delay)? {
        sc.latency.default = v;
    }
    let (per_rank, slowdown) = read_load(&mut r.indexed("latency", "rank"), &mut r.indexed("latency", "slow"))?;
    sc.latency.per_rank = per_rank;
    sc.slowdown = slowdown;

    r.reject_unused()?;
    sc.validate()?;
    Ok(sc)
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Inverse of [`parse_config`]: every field written explicitly.
pub fn serialize_config(s: &Scenario) -> String {
    let g = &s.setup.grid;
    let mut o = String::new();
    let _ = writeln!(o, "[grid]");
    let _ = writeln!(o, "nx = {}\nny = {}\nnz = {}", g.nx, g.ny, g.nz);
    let _ = writeln!(o, "patch_side = {}", num(g.patch_side));
    let _ = writeln!(o, "h_global = {}", num(g.h_global));
    let _ = writeln!(o, "h_fine = {}", num(g.h_fine));
    let _ = writeln!(o, "conforming = {}", g.conforming_interfaces);
    let patched = match &g.patched_cells {
        PatchedCells::All => "all".to_string(),
        PatchedCells::Subset(c) if c.is_empty() => "none".to_string(),
        PatchedCells::Subset(c) => c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
    };
    let _ = writeln!(o, "patched = {patched}");

    let p = &s.setup;
    let _ = writeln!(o, "\n[physics]");
    match p.physics.kind {
        PhysicsKind::Poisson => {
            let _ = writeln!(o, "kind = poisson");
        }
        PhysicsKind::Elasticity => {
            let _ = writeln!(o, "kind = elasticity\npoisson_ratio = {}", num(p.physics.poisson_ratio));
        }
    }
    let _ = writeln!(o, "contrast = {}", num(p.contrast));
    let _ = writeln!(o, "matrix_value = {}", num(p.matrix_value));
    if let Some(r) = p.inclusion_radius {
        let _ = writeln!(o, "inclusion_radius = {}", num(r));
    }
    let [a, b, c] = p.inclusion_offset;
    let _ = writeln!(o, "inclusion_offset = {},{},{}", num(a), num(b), num(c));
    let solver = match p.solver {
        SolverKind::Direct => "direct".to_string(),
        SolverKind::ConjugateGradient { tol } => format!("cg:{}", num(tol)),
    };
    let _ = writeln!(o, "solver = {solver}");

    let _ = writeln!(o, "\n[run]");
    let _ = writeln!(o, "id = {}", s.id);
    let _ = writeln!(o, "mode = {}", s.mode.name());
    let _ = writeln!(o, "driver = {}", s.driver.name());
    if let Some(w) = s.omega {
        let _ = writeln!(o, "omega = {}", num(w));
    }
    let _ = writeln!(o, "tol = {}", num(s.tol));
    if let Some(n) = s.max_iterations {
        let _ = writeln!(o, "max_iterations = {n}");
    }
    let _ = writeln!(o, "ranks = {}", s.ranks);
    match s.assignment {
        AssignPolicy::Block => {
            let _ = writeln!(o, "assignment = block");
        }
        AssignPolicy::Random { seed } => {
            let _ = writeln!(o, "assignment = random\nseed = {seed}");
        }
    }
    let _ = writeln!(o, "dilation = {}", s.dilation.map_or("auto".into(), num));
    if let Some(w) = s.max_wall_seconds {
        let _ = writeln!(o, "max_wall_seconds = {}", num(w));
    }
    if let Some(out) = &s.output {
        let _ = writeln!(o, "output = {}", out.display());
    }

    let _ = writeln!(o, "\n[latency]");
    let _ = writeln!(o, "seed = {}", s.latency.seed);
    let _ = writeln!(o, "default = {}", format_delay(&s.latency.default));
    let mut per_rank = s.latency.per_rank.clone();
    per_rank.sort_by_key(|x| x.0);
    for (r, d) in per_rank {
        let _ = writeln!(o, "rank.{r} = {}", format_delay(&d));
    }
    let mut slow = s.slowdown.clone();
    slow.sort_by_key(|x| x.0);
    for (r, f) in slow {
        let _ = writeln!(o, "slow.{r} = {}", num(f));
    }
    o
}
