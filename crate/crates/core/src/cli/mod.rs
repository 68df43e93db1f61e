//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 for usage errors, 2 when a
//! precondition of the computation fails, 3 when a check fails.

pub mod commands;
pub mod config;
pub mod spec;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::Error;

pub use commands::Outcome;
pub use config::RunConfig;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Environment variable overriding the output directory from a config file.
pub const ENV_OUT_DIR: &str = "FREDHOLM_OUT_DIR";
/// Environment variable setting the worker thread count.
pub const ENV_THREADS: &str = "FREDHOLM_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_PRECONDITION,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fredholm", version, about = "Fredholm representations of Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factorize a covariance into a kernel and write it with a manifest.
    Factorize(Opts),
    /// Simulate paths and check their covariance.
    Simulate(Opts),
    /// Condition on linear functionals, orthogonally and/or canonically.
    Bridge(Opts),
    /// Build the Langevin kernel and cross-check it against an Euler scheme.
    Langevin(Opts),
    /// Compare two kernels and write a Volterra perturbation.
    Equiv(Opts),
    /// Series expansion in a chosen basis with truncation errors.
    Kl(Opts),
    /// Monte Carlo check of the Itô formula in duality form.
    ItoCheck(Opts),
    /// Per-draw check of the multiple-integral product formula.
    ChaosCheck(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Factorize(_) => "factorize",
            Command::Simulate(_) => "simulate",
            Command::Bridge(_) => "bridge",
            Command::Langevin(_) => "langevin",
            Command::Equiv(_) => "equiv",
            Command::Kl(_) => "kl",
            Command::ItoCheck(_) => "ito-check",
            Command::ChaosCheck(_) => "chaos-check",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Factorize(o)
            | Command::Simulate(o)
            | Command::Bridge(o)
            | Command::Langevin(o)
            | Command::Equiv(o)
            | Command::Kl(o)
            | Command::ItoCheck(o)
            | Command::ChaosCheck(o) => o,
        }
    }
}

/// Flags override the config file; `--set key=value` reaches every key.
#[derive(Debug, Args)]
struct Opts {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Covariance model: bm, bb, fbm:H=0.75, ou:theta=1,sigma=1, rank-one:f=t, csv:PATH.
    #[arg(long)]
    model: Option<String>,
    /// Horizon T.
    #[arg(long = "T")]
    horizon: Option<String>,
    /// Grid size (intervals for trapezoid, nodes for gauss-legendre).
    #[arg(long)]
    n: Option<String>,
    /// Quadrature rule: trapezoid or gauss-legendre.
    #[arg(long)]
    rule: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Kernel: mercer, bm-indicator, bb-orthogonal, bb-canonical, rank-one.
    #[arg(long)]
    kernel: Option<String>,
    /// Second kernel for equiv.
    #[arg(long)]
    other: Option<String>,
    /// Langevin / perturbation rate.
    #[arg(long)]
    theta: Option<String>,
    /// Series basis: mercer-eigen, trigonometric, haar.
    #[arg(long)]
    basis: Option<String>,
    /// Series rank.
    #[arg(long)]
    m: Option<String>,
    /// Bridge functionals, e.g. const,ind:0.5,int:0.25:T.
    #[arg(long)]
    g: Option<String>,
    /// Bridge construction: orthogonal, canonical or both.
    #[arg(long)]
    method: Option<String>,
    /// Itô integrand: x2, x3, ..., gauss:a=0.1.
    #[arg(long)]
    f: Option<String>,
    /// Itô evaluation time.
    #[arg(long)]
    t: Option<String>,
    /// Test variable: xT2 or products like x(0.5)^2*x(T).
    #[arg(long = "G")]
    test_variable: Option<String>,
    /// Chaos pair: aligned, orthogonal or oblique.
    #[arg(long)]
    pair: Option<String>,
    /// Largest p + q in chaos-check.
    #[arg(long)]
    max_order: Option<String>,
    /// Noise draws in chaos-check.
    #[arg(long)]
    draws: Option<String>,
    /// Any configuration key, e.g. `--set tol_z=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the canonical configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Opts {
    fn flags(&self) -> Vec<(&'static str, &String)> {
        let pairs = [
            ("model", &self.model),
            ("T", &self.horizon),
            ("n", &self.n),
            ("rule", &self.rule),
            ("seed", &self.seed),
            ("paths", &self.paths),
            ("out", &self.out),
            ("kernel", &self.kernel),
            ("other", &self.other),
            ("theta", &self.theta),
            ("basis", &self.basis),
            ("m", &self.m),
            ("g", &self.g),
            ("method", &self.method),
            ("f", &self.f),
            ("t", &self.t),
            ("G", &self.test_variable),
            ("pair", &self.pair),
            ("max_order", &self.max_order),
            ("draws", &self.draws),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

/// Defaults, then the config file, then the environment, then flags.
fn build_config(opts: &Opts, env_out: Option<String>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(out) = env_out {
        cfg.set("out", &out)?;
    }
    for (k, v) in opts.flags() {
        cfg.set(k, v)?;
    }
    for item in &opts.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(ENV_THREADS) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{ENV_THREADS} must be a positive integer, got `{raw}`")))?;
    // a pool that is already configured (e.g. in-process reuse) is left as is
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn usage_text(command: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(command) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.get("model").is_empty() {
        return Err(CliError::Usage("no model given; pass --model or set `model` in the config file".into()));
    }
    match command {
        Command::Factorize(_) => commands::factorize(cfg),
        Command::Simulate(_) => commands::simulate(cfg),
        Command::Bridge(_) => commands::bridge(cfg),
        Command::Langevin(_) => commands::langevin(cfg),
        Command::Equiv(_) => commands::equiv(cfg),
        Command::Kl(_) => commands::kl(cfg),
        Command::ItoCheck(_) => commands::ito_check(cfg),
        Command::ChaosCheck(_) => commands::chaos_check(cfg),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    let result = configure_threads()
        .and_then(|_| build_config(cli.command.opts(), std::env::var(ENV_OUT_DIR).ok()))
        .and_then(|cfg| {
            if cli.command.opts().print_config {
                print!("{cfg}");
                return Ok(Outcome { pass: true });
            }
            dispatch(&cli.command, &cfg)
        });
    match result {
        Ok(Outcome { pass: true }) => {
            println!("{name}: pass");
            EXIT_PASS
        }
        Ok(Outcome { pass: false }) => {
            println!("{name}: FAIL");
            EXIT_CHECK_FAILED
        }
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}\n\n{}", usage_text(name));
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
