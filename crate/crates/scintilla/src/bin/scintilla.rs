use anyhow::Context;
use clap::{Parser, Subcommand};
use scintilla::config::{RunKind, ScenarioConfig};
use scintilla::io::sha256_hex;
use scintilla::scenario::{run_scenario, RunContext};
use std::path::PathBuf;
use std::process::ExitCode;

/// Photon-state decay in atmospheric turbulence.
///
/// Every flag can also be set through an environment variable with the
/// SCINTILLA_ prefix (SCINTILLA_CONFIG, SCINTILLA_SEED, ...).
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML with unit-suffixed quantities).
    #[arg(long, global = true, env = "SCINTILLA_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true, env = "SCINTILLA_SEED")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "SCINTILLA_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SCINTILLA_THREADS")]
    threads: Option<usize>,

    /// Coupling-set cache directory.
    #[arg(long, global = true, env = "SCINTILLA_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rytov-variance curves and regime boundaries.
    Regime,
    /// Single-phase-screen density matrix.
    SingleScreen,
    /// Kinetic matrix, Λ tensor and Λ_T.
    Couplings,
    /// Integrate the IPE or Lindblad equation.
    Evolve,
    /// Monte Carlo split-step ensemble.
    Mc,
    /// IPE against Monte Carlo, element by element.
    Compare,
    /// Concurrence against ω0/r0 for a Bell state.
    ConcurrenceCurve,
}

impl Command {
    fn kind(&self) -> RunKind {
        match self {
            Command::Regime => RunKind::Regime,
            Command::SingleScreen => RunKind::SingleScreen,
            Command::Couplings => RunKind::Couplings,
            Command::Evolve => RunKind::Evolve,
            Command::Mc => RunKind::Mc,
            Command::Compare => RunKind::Compare,
            Command::ConcurrenceCurve => RunKind::ConcurrenceCurve,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let path = cli.config.context("--config <path> is required")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ScenarioConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
    let kind = cli.command.kind();
    if let Some(k) = cfg.run {
        if k != kind {
            eprintln!("note: config names run `{}`, running `{}`", k.name(), kind.name());
        }
    }
    let ctx = RunContext {
        kind,
        out_dir: cli.out,
        cache_dir: cli.cache,
        seed: cli.seed,
        config_sha256: sha256_hex(text.as_bytes()),
    };
    let outcome = run_scenario(&cfg, &ctx).with_context(|| format!("{} run failed", kind.name()))?;
    for v in &outcome.manifest.violations {
        eprintln!("violation: {v}");
    }
    for o in &outcome.manifest.outputs {
        println!("{}", ctx.out_dir.join(&o.file).display());
    }
    Ok(!outcome.fatal)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
