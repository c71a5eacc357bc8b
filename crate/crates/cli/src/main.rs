use clap::Parser;
use moran_cli::{run_file, Overrides};
use moran_core::config::Experiment;
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs one experiment of the Moran recombination model and writes CSV
/// reports plus summary.json. Exit status: 0 all comparisons pass, 1 some
/// comparison fails, 2 error.
#[derive(Parser, Debug)]
#[command(name = "moran-moments", version)]
struct Args {
    /// simulate | hierarchy | oracle | deterministic | compare | ld | nonclosure
    experiment: Experiment,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run replicates sequentially on one thread.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        experiment: Some(args.experiment),
        seed: args.seed,
        replicates: args.replicates,
        out: args.out,
        strict: args.strict,
    };
    match run_file(&args.config, &overrides) {
        Ok(summary) => {
            let c = summary.comparisons;
            println!(
                "{}: {} comparisons, {} passed, {} failed",
                summary.experiment, c.total, c.passed, c.failed
            );
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
