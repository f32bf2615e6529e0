//! The `gmclab` command-line runner.

pub mod args;
mod commands;
mod config;
pub mod manifest;
mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches};
use gmclab::table::ExperimentTable;
use gmclab::GmcError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use args::{Cli, Command, Profile};
use manifest::{sha256_hex, ArtifactRecord, CriterionVerdict, RunManifest};

/// Process exit status reported when `verify-all` finds a failing criterion.
pub const EXIT_CRITERIA_FAILED: i32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Usage(String),
    Precondition(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Precondition(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Precondition(m) => write!(f, "precondition failed: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<GmcError> for Failure {
    fn from(e: GmcError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Precondition(e.to_string())
        }
    }
}

/// Settings shared by every command of one run.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub seed: u64,
    pub profile: Profile,
}

/// Everything a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Tables with their one-line summaries.
    pub tables: Vec<(ExperimentTable, String)>,
    /// Other artifacts: file name, bytes, summary.
    pub files: Vec<(String, Vec<u8>, String)>,
    /// Lines printed before the summaries.
    pub notes: Vec<String>,
    pub verdicts: Vec<CriterionVerdict>,
    /// Print only the notes.
    pub quiet: bool,
    pub exit: i32,
}

impl Outcome {
    pub fn table(&mut self, t: ExperimentTable, summary: String) {
        self.tables.push((t, summary));
    }

    pub fn file(&mut self, name: &str, bytes: Vec<u8>, summary: String) {
        self.files.push((name.to_string(), bytes, summary));
    }
}

fn typed<T: DeserializeOwned>(v: Value) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("bad parameters: {e}")))
}

fn call<A, F>(params: Value, ctx: &Ctx, f: F) -> Result<(Outcome, Value), Failure>
where
    A: DeserializeOwned + Serialize,
    F: FnOnce(A, &Ctx) -> Result<(Outcome, A), Failure>,
{
    let (o, a) = f(typed(params)?, ctx)?;
    Ok((o, serde_json::to_value(&a).expect("arguments serialize")))
}

/// Run the named command on a parameter record; returns the outcome and the resolved record.
pub fn dispatch(name: &str, params: Value, ctx: &Ctx) -> Result<(Outcome, Value), Failure> {
    match name {
        "kernel-check" => call(params, ctx, commands::kernel_check),
        "sample" => call(params, ctx, commands::sample),
        "gmc-moments" => call(params, ctx, commands::gmc_moments),
        "scaling-law" => call(params, ctx, commands::scaling_law),
        "inverse-check" => call(params, ctx, commands::inverse_check),
        "ratio-moments" => call(params, ctx, commands::ratio_moments),
        "multipoint" => call(params, ctx, commands::multipoint),
        "graph-independence" => call(params, ctx, commands::graph_independence),
        "overlap-decay" => call(params, ctx, commands::overlap_decay),
        "indicator-tail" => call(params, ctx, commands::indicator_tail),
        "smallball" => call(params, ctx, commands::smallball),
        "lebesgue-rate" => call(params, ctx, commands::lebesgue_rate),
        "dilatation" => call(params, ctx, commands::dilatation),
        "feasibility" => call(params, ctx, commands::feasibility),
        "zeta" => call(params, ctx, commands::zeta_cmd),
        "verify-all" => call(params, ctx, verify::verify_all),
        other => Err(Failure::Usage(format!("unknown command {other}"))),
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Precondition(format!("cannot write {}: {e}", path.display()))
}

/// Write the artifacts of `o` under `dir` and return their records, in output order.
fn write_artifacts(dir: &Path, o: &Outcome) -> Result<Vec<(ArtifactRecord, String)>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let mut records = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    let mut put = |name: String, bytes: &[u8], summary: &str| -> Result<(), Failure> {
        if !used.insert(name.clone()) {
            return Err(Failure::Precondition(format!("artifact {name} produced twice")));
        }
        let path = dir.join(&name);
        std::fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        records.push((ArtifactRecord { path: name, sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }, summary.to_string()));
        Ok(())
    };
    for (t, s) in &o.tables {
        put(format!("{}.csv", t.name), t.to_csv().as_bytes(), s)?;
    }
    for (name, bytes, s) in &o.files {
        put(name.clone(), bytes, s)?;
    }
    Ok(records)
}

/// Resolved global settings.
struct Settings {
    seed: u64,
    profile: Profile,
    threads: Option<usize>,
    out: PathBuf,
}

/// Execute `name` with `params`, write its artifacts and manifest, and print the summaries.
fn execute(
    name: &str,
    params: Value,
    s: &Settings,
    config_file: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(RunManifest, i32), Failure> {
    let ctx = Ctx { seed: s.seed, profile: s.profile };
    let started = unix_now();
    let (outcome, params) = with_threads(s.threads, || dispatch(name, params, &ctx))??;
    let dir = s.out.join(name);
    let records = write_artifacts(&dir, &outcome)?;
    let mut lines: Vec<String> = outcome.notes.clone();
    if !outcome.quiet {
        lines.extend(records.iter().map(|(r, s)| format!("{}: {s}", r.path)));
    }
    for line in &lines {
        writeln!(stdout, "{line}").map_err(|e| Failure::Precondition(format!("cannot write to stdout: {e}")))?;
    }
    let m = RunManifest::new(
        name,
        s.seed,
        s.profile,
        s.threads,
        params,
        config_file.map(|p| p.display().to_string()),
        started,
        unix_now(),
        records.iter().map(|(r, _)| r.clone()).collect(),
        records.into_iter().map(|(r, s)| format!("{}: {s}", r.path)).collect(),
        outcome.verdicts,
    );
    m.write(&dir.join("manifest.json"))?;
    Ok((m, outcome.exit))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Failure::Usage("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Precondition(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Replay a manifest and compare digests; mismatches are numerical failures.
fn replay(path: &Path, s: &Settings, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let recorded = RunManifest::read(path)?;
    let settings = Settings { seed: recorded.seed, profile: recorded.profile, threads: s.threads, out: s.out.clone() };
    let (fresh, exit) = execute(&recorded.command, recorded.params.clone(), &settings, None, stdout)?;
    let mismatched: Vec<&str> = recorded
        .artifacts
        .iter()
        .filter(|r| !fresh.artifacts.iter().any(|f| f.path == r.path && f.sha256 == r.sha256))
        .map(|r| r.path.as_str())
        .collect();
    if !mismatched.is_empty() {
        return Err(Failure::Numerical(format!("replay digests differ for {}", mismatched.join(", "))));
    }
    writeln!(stdout, "replay: all {} recorded digests reproduced", recorded.artifacts.len())
        .map_err(|e| Failure::Precondition(e.to_string()))?;
    Ok(exit)
}

fn run_inner(argv: Vec<OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let mut command = Cli::command();
    let matches = match command.try_get_matches_from_mut(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return Ok(code);
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let file = match &cli.global.config {
        Some(p) => Some(config::load(p)?),
        None => None,
    };
    let global = config::merge_globals(&cli.global, file.as_ref(), &matches, sub)?;
    let settings = Settings { seed: global.seed, profile: global.profile, threads: global.threads, out: global.out.clone() };
    if let Command::Run(r) = &cli.command {
        return replay(&r.from_manifest, &settings, stdout);
    }
    let params = serde_json::to_value(&cli.command).expect("arguments serialize");
    let sub_cmd = command.find_subcommand(name).expect("parsed subcommand exists");
    let params = config::merge_section(params, file.as_ref().and_then(|f| f.get(name)), sub, sub_cmd, name)?;
    let (_, exit) = execute(name, params, &settings, cli.global.config.as_deref(), stdout)?;
    Ok(exit)
}

/// Run with explicit argv (program name first) and output streams; returns the exit code.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    match run_inner(argv, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "gmclab: {f}");
            if let Failure::Usage(_) = f {
                let _ = writeln!(stderr, "{}", Cli::command().render_usage());
            }
            f.exit_code()
        }
    }
}

pub fn run_from_env() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
