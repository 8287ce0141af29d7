use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cone_ke_cli::{CliError, Control, RunConfig};

#[derive(Parser)]
#[command(name = "cone-ke", version, about = "Continuity-method runs for conical Kahler-Einstein metrics on the sphere")]
struct Cli {
    /// Worker threads for concurrent epsilon cells (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed of the random audit potentials.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop each cell after N recorded states (for testing resume).
    #[arg(long, hide = true)]
    halt_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Twisted path, angle deformation and epsilon ladder with audits.
    Deform(RunArgs),
    /// Re-run the audit suite on a stored state.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to audit against; defaults to the one embedded in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory of the interrupted run; defaults to the directory holding `cells/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        halt_after: Option<usize>,
    },
    /// Independent runs over the configured cells, summarized in sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Deform(a) => {
            let cfg = RunConfig::load(&a.config)?;
            cfg.validate()?;
            let out = a.out.unwrap_or_else(|| cfg.output.directory.clone());
            let summary = cone_ke_cli::deform(&cfg, &out, &Control { halt_after: a.halt_after, seed: a.seed })?;
            finish(summary)
        }
        Command::Resume { checkpoint, out, seed, halt_after } => {
            let out = match out {
                Some(o) => o,
                None => run_dir_of(&checkpoint)?,
            };
            let summary = cone_ke_cli::resume(&checkpoint, &out, &Control { halt_after, seed })?;
            finish(summary)
        }
        Command::Audit { checkpoint, config, out } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let report = cone_ke_cli::audit(&checkpoint, cfg.as_ref(), out.as_deref())?;
            for e in &report.entries {
                println!(
                    "{:<6} {:<24} {:>24e} {:>6} {:>24e} (tol {:e})",
                    if e.passed { "PASS" } else { "FAIL" },
                    e.name,
                    e.measured,
                    e.relation,
                    e.bound,
                    e.tolerance
                );
            }
            let count = report.failures().count();
            if count > 0 {
                return Err(CliError::AuditFailed { count });
            }
            Ok(())
        }
        Command::Sweep { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.directory.clone());
            let failed = cone_ke_cli::sweep(&cfg, &out)?;
            if failed > 0 {
                log::warn!("{failed} sweep cells failed; see sweep.csv");
            }
            Ok(())
        }
    }
}

fn finish(summary: cone_ke_cli::RunSummary) -> Result<(), CliError> {
    if !summary.complete {
        log::info!("run halted; continue with `cone-ke resume`");
        return Ok(());
    }
    if summary.audit_failures > 0 {
        return Err(CliError::AuditFailed { count: summary.audit_failures });
    }
    Ok(())
}

/// `<out>/cells/e<k>/checkpoint.ckpt` -> `<out>`.
fn run_dir_of(checkpoint: &std::path::Path) -> Result<PathBuf, CliError> {
    checkpoint
        .ancestors()
        .find(|p| p.file_name().is_some_and(|n| n == "cells"))
        .and_then(|p| p.parent())
        .map(|p| p.to_path_buf())
        .ok_or_else(|| CliError::Config("cannot infer the run directory from the checkpoint path; pass --out".into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONE_KE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cone-ke: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
