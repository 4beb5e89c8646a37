use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sbm::cli::{print_summary, report_json, run_file, CliError};
use sbm::verify::{run_suite, Suite, Verdict, VerifyOptions, DEFAULT_SEED};

#[derive(Parser)]
#[command(
    name = "sbm",
    version,
    about = "Finite-rate symbiotic branching: SPDE, moment dual and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config (or a manifest).
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance suite and emit a JSON report.
    Verify {
        /// heat, duality, martingale, interface, curve, selfdual, scaling, brownian or all
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Override every ensemble size.
        #[arg(long)]
        replicas: Option<usize>,
        /// Write report.json here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out } => match run_file(&config, out.as_deref()) {
            Ok(o) => {
                if let Some(rep) = &o.verify {
                    let _ = print_summary(&mut std::io::stderr(), rep);
                }
                eprintln!("wrote {} files to {}", o.files.len(), o.dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                if let CliError::VerifyFailed(rep) = &e {
                    let _ = print_summary(&mut std::io::stderr(), rep);
                }
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
        Command::Verify {
            suite,
            seed,
            replicas,
            out,
        } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let rep = match run_suite(suite, &VerifyOptions { seed, replicas }) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let _ = print_summary(&mut std::io::stderr(), &rep);
            let json = report_json(&rep);
            let written = match &out {
                Some(dir) => std::fs::create_dir_all(dir)
                    .and_then(|_| std::fs::write(dir.join("report.json"), &json)),
                None => std::io::stdout().write_all(json.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            if rep.verdict == Verdict::Fail {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
