//! Batch front-end for the `uvlab` core: TOML configs in, CSV tables and a
//! JSON manifest out.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 numerical
//! non-convergence, 3 invariant violation, 4 I/O failure.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::output::{Manifest, Overrides, Table, CSV_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Numerical,
    Invariant,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 1,
            FailureKind::Numerical => 2,
            FailureKind::Invariant => 3,
            FailureKind::Io => 4,
        }
    }
}

/// A failed run. Tables computed before the failure are still written.
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
    pub tables: Vec<Table>,
}

impl Failure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Failure { kind, message: message.into(), tables: Vec::new() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(FailureKind::Config, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(FailureKind::Numerical, message)
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self::new(FailureKind::Invariant, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(FailureKind::Io, message)
    }

    pub fn with_tables(mut self, tables: Vec<Table>) -> Self {
        self.tables = tables;
        self
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl From<uvlab::Error> for Failure {
    fn from(e: uvlab::Error) -> Self {
        use uvlab::Error::*;
        let kind = match &e {
            InvalidParameter(_) | BasisLimit { .. } | DimensionMismatch { .. } | OutsideHalfPlane(_) => FailureKind::Config,
            NotConverged(_) | Singular => FailureKind::Numerical,
            InvariantViolation(_) => FailureKind::Invariant,
        };
        Failure::new(kind, e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::io(format!("{e:#}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "uvlab", version, about = "Truncated Fock-space experiments for a UV-regularized fermion-boson model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "UVLAB_THREADS")]
    pub threads: Option<usize>,
    /// Base seed for randomized audits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Largest weight for `enumerate`.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Comma-separated cutoff list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda_list: Option<Vec<f64>>,
    /// Real spectral parameter for series and distances.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Canonical relations on the truncated basis.
    AlgebraCheck,
    /// Hamiltonian summary per cutoff.
    Build,
    /// E2 on the grid and by quadrature, with divergence fits.
    Counterterm,
    /// Exponent thresholds for d = 1, 2, 3.
    Thresholds,
    /// Raw and reordered Neumann series against the direct resolvent.
    Neumann,
    /// Admissible sequence counts per weight.
    Enumerate,
    /// Operator-bound audits.
    Audit,
    /// Ground energies across the cutoff list.
    Sweep,
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::AlgebraCheck => "algebra-check",
            Command::Build => "build",
            Command::Counterterm => "counterterm",
            Command::Thresholds => "thresholds",
            Command::Neumann => "neumann",
            Command::Enumerate => "enumerate",
            Command::Audit => "audit",
            Command::Sweep => "sweep",
            Command::Replay { .. } => "replay",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Some(match name {
            "algebra-check" => Command::AlgebraCheck,
            "build" => Command::Build,
            "counterterm" => Command::Counterterm,
            "thresholds" => Command::Thresholds,
            "neumann" => Command::Neumann,
            "enumerate" => Command::Enumerate,
            "audit" => Command::Audit,
            "sweep" => Command::Sweep,
            _ => return None,
        })
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        cfg.solver.seed = s;
    }
    if let Some(k) = o.k {
        cfg.solver.enumerate_k = k;
    }
    if let Some(l) = &o.lambda_list {
        cfg.cutoffs.lambda_list = l.clone();
    }
    if let Some(z) = o.z {
        cfg.solver.z = Some(z);
    }
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    match command {
        Command::AlgebraCheck => commands::algebra_check(cfg),
        Command::Build => commands::build(cfg),
        Command::Counterterm => commands::counterterm(cfg),
        Command::Thresholds => commands::thresholds_table(cfg),
        Command::Neumann => commands::neumann(cfg),
        Command::Enumerate => commands::enumerate(cfg),
        Command::Audit => commands::audit(cfg),
        Command::Sweep => commands::sweep(cfg),
        Command::Replay { .. } => Err(Failure::config("replay cannot be nested")),
    }
}

/// Outcome of one invocation.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub message: Option<String>,
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, Failure> {
    match threads {
        Some(0) => Err(Failure::config("--threads must be positive")),
        Some(1) => Ok(uvlab::par::sequential(f)),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Failure::config(e.to_string()))?;
            Ok(pool.install(f))
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(f()),
        None => Ok(f()),
    }
}

/// Run a parsed command line. Never panics on bad input; the exit code
/// carries the failure class.
pub fn run(cli: &Cli) -> RunOutcome {
    let g = &cli.global;
    let prepared = (|| -> Result<(Command, RunConfig, Overrides), Failure> {
        match &cli.command {
            Command::Replay { manifest } => {
                let m = Manifest::read(manifest).map_err(|e| Failure::config(format!("{e:#}")))?;
                let cmd = Command::from_name(&m.command).ok_or_else(|| Failure::config(format!("unknown command {} in manifest", m.command)))?;
                Ok((cmd, m.config, m.overrides))
            }
            other => {
                let mut cfg = load_config(g.config.as_deref())?;
                let o = Overrides { seed: g.seed, k: g.k, lambda_list: g.lambda_list.clone(), z: g.z };
                apply_overrides(&mut cfg, &o);
                Ok((other.clone(), cfg, o))
            }
        }
    })();
    let (command, mut cfg, overrides) = match prepared {
        Ok(x) => x,
        Err(f) => return RunOutcome { exit_code: f.kind.exit_code(), out_dir: None, message: Some(f.message) },
    };
    if let Some(out) = &g.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if let Err(e) = cfg.validate() {
        return RunOutcome { exit_code: 1, out_dir: None, message: Some(e) };
    }
    let dir = PathBuf::from(&cfg.output.dir);
    if let Err(e) = fs::create_dir_all(&dir) {
        return RunOutcome { exit_code: 4, out_dir: None, message: Some(format!("cannot create {}: {e}", dir.display())) };
    }
    let start = Instant::now();
    let result = with_threads(g.threads, || dispatch(&command, &cfg)).and_then(|r| r);
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let (tables, failure) = match result {
        Ok(t) => (t, None),
        Err(mut f) => (std::mem::take(&mut f.tables), Some(f)),
    };
    let mut files = Vec::new();
    for t in &tables {
        match t.write(&dir) {
            Ok(p) => files.push(p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
            Err(e) => return RunOutcome { exit_code: 4, out_dir: Some(dir), message: Some(format!("{e:#}")) },
        }
    }
    let exit_code = failure.as_ref().map(|f| f.kind.exit_code()).unwrap_or(0);
    let threads = g.threads.unwrap_or_else(uvlab::par::threads);
    let manifest = Manifest {
        tool: "uvlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        csv_schema: CSV_SCHEMA_VERSION,
        command: command.name().into(),
        overrides,
        seed: cfg.solver.seed,
        config: cfg,
        threads,
        files,
        timings_ms: vec![(command.name().to_string(), elapsed)],
        exit_code,
    };
    if let Err(e) = manifest.write(&dir) {
        return RunOutcome { exit_code: 4, out_dir: Some(dir), message: Some(format!("{e:#}")) };
    }
    RunOutcome { exit_code, out_dir: Some(dir), message: failure.map(|f| f.message) }
}
