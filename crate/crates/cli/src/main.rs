use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermalab::{dump_matrix, list_models, run, set_blas_threads, verify::verify, RunError, OUT_ENV};

#[derive(Parser)]
#[command(name = "thermalab", version, about = "Run and verify thermalization experiments")]
struct Cli {
    /// BLAS threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $THERMALAB_OUT/<config stem>, else runs/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a finished run against its acceptance criteria.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the available models, observables and experiment kinds.
    ListModels,
    /// Write the Hamiltonian of a config's model as CSV.
    DumpMatrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// OpenBLAS 0.3.20 picks a broken kernel on some AVX-512 machines. The
/// core type must be set before the library initializes, so re-exec once
/// with a known-good one when the user has not chosen.
fn ensure_blas_coretype() -> Option<ExitCode> {
    const GUARD: &str = "THERMALAB_BLAS_REEXEC";
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() || std::env::var_os(GUARD).is_some() {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if !std::arch::is_x86_feature_detected!("avx512f") {
            return None;
        }
        let core = if std::arch::is_x86_feature_detected!("avx2") { "Haswell" } else { "Sandybridge" };
        let exe = std::env::current_exe().ok()?;
        let status = std::process::Command::new(exe)
            .args(std::env::args_os().skip(1))
            .env("OPENBLAS_CORETYPE", core)
            .env(GUARD, "1")
            .status()
            .ok()?;
        Some(ExitCode::from(status.code().unwrap_or(1).clamp(0, 255) as u8))
    }
    #[cfg(not(target_arch = "x86_64"))]
    None
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(code) = ensure_blas_coretype() {
        return code;
    }
    set_blas_threads(cli.threads);
    if let Err(e) = thermalab_core::linalg::blas_self_check() {
        return fail(&RunError::Numeric(e));
    }
    match cli.command {
        Command::Run { config, out, seed } => match run(&config, out, seed) {
            Ok(s) => {
                println!("{}", serde_json::to_string_pretty(&s.report).unwrap_or_default());
                println!("wrote {} files to {}", s.manifest.outputs.len(), s.dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Verify { config, out } => match verify(&config, out) {
            Ok(report) => {
                for v in &report.verdicts {
                    println!("{}", v.line());
                }
                if report.all_pass() {
                    ExitCode::SUCCESS
                } else {
                    let n = report.verdicts.iter().filter(|v| !v.pass).count();
                    fail(&RunError::Acceptance(format!("{n} check(s) failed in {}", report.dir.display())))
                }
            }
            Err(e) => fail(&e),
        },
        Command::ListModels => {
            print!("{}", list_models());
            println!("default output root: ${OUT_ENV}, else ./runs");
            ExitCode::SUCCESS
        }
        Command::DumpMatrix { config, out } => match dump_matrix(&config, out) {
            Ok(p) => {
                println!("wrote {}", p.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
