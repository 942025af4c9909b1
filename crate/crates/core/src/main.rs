use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use invariant_moments::config::{
    load_config, ScenarioConfig, ScenarioKind, RIGIDBODY_REFERENCE, TWOBODY_DEFAULT, TWOBODY_ISOTROPIC,
};
use invariant_moments::harness::{run_scenario, verify_derivations};
use invariant_moments::report::{write_outputs, write_summary, RunReport};
use invariant_moments::{Error, Result};

/// Moment propagation of dynamical invariants under white noise, checked against Monte Carlo.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rigid body driven by random torques: kinetic-energy moments vs Monte Carlo.
    Rigidbody(RunArgs),
    /// Perturbed two-body problem: angular-momentum rate bounds vs Monte Carlo.
    Twobody(RunArgs),
    /// Run the discrepancy oracles and algebraic identity checks.
    VerifyDerivations(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of Monte Carlo samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; defaults to the bundled scenario for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    /// Rigid-body scenario JSON (default: bundled reference scenario).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Two-body scenario JSON with isotropic noise (default: bundled).
    #[arg(long)]
    twobody_config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn load(path: Option<&Path>, bundled: &str, kind: ScenarioKind, common: &Common) -> Result<ScenarioConfig> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::from_json(bundled)?,
    };
    if cfg.scenario != kind {
        return Err(Error::Config(format!(
            "expected a {} scenario, got {}",
            kind.name(),
            cfg.scenario.name()
        )));
    }
    Ok(cfg
        .with_seed(common.seed)
        .with_samples(common.samples)?
        .with_output_dir(common.out.clone()))
}

fn print_checks(report: &RunReport) {
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let (report, out) = match &cli.command {
        Command::Rigidbody(a) | Command::Twobody(a) => {
            let (kind, bundled) = match cli.command {
                Command::Rigidbody(_) => (ScenarioKind::Rigidbody, RIGIDBODY_REFERENCE),
                _ => (ScenarioKind::Twobody, TWOBODY_DEFAULT),
            };
            let cfg = load(a.config.as_deref(), bundled, kind, &a.common)?;
            let report = with_threads(a.common.threads, || run_scenario(&cfg))?;
            let (csv, json) = write_outputs(&report, &cfg.output_dir)?;
            info!("wrote {} and {}", csv.display(), json.display());
            (report, cfg.output_dir)
        }
        Command::VerifyDerivations(a) => {
            let rigid = load(
                a.config.as_deref(),
                RIGIDBODY_REFERENCE,
                ScenarioKind::Rigidbody,
                &a.common,
            )?;
            let iso = load(
                a.twobody_config.as_deref(),
                TWOBODY_ISOTROPIC,
                ScenarioKind::Twobody,
                &a.common,
            )?;
            let report = with_threads(a.common.threads, || verify_derivations(&rigid, &iso))?;
            let dir = rigid.output_dir.clone();
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
            write_summary(&report, &dir.join("verify_derivations_summary.json"))?;
            (report, dir)
        }
    };
    print_checks(&report);
    println!("outputs in {}", out.display());
    Ok(report.all_passed())
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build a {n}-thread pool: {e}")))?
            .install(f),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
