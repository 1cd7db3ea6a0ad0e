use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmrs_harness::summary::{write_comparisons, write_summary};
use gmrs_harness::{ordering_violations, parse_csv, run, summarize, write_outputs, ExperimentConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_REALIZATION_FAILED: u8 = 3;
const EXIT_ORDERING: u8 = 4;

#[derive(Parser)]
#[command(name = "gmrs", version, about = "General rate splitting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme over the sweep and write CSV results.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with code 4 when a proposed scheme trails a baseline by more than 1%.
        #[arg(long)]
        assert_ordering: bool,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Print per-cell statistics and paired comparisons for result CSVs.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(c) => {
                println!(
                    "{}: ok ({} schemes, {} sweep values, {} realizations)",
                    config.display(),
                    c.schemes.len(),
                    c.sweep_values.len(),
                    c.realizations
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run {
            config,
            out,
            seed,
            jobs,
            assert_ordering,
        } => {
            let mut c = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(o) = out {
                c.out = o;
            }
            if jobs == Some(0) {
                eprintln!("--jobs must be positive");
                return ExitCode::from(EXIT_CONFIG);
            }
            let output = match run(&c, jobs) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("run failed: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            };
            if let Err(e) = write_outputs(&output, &c, &c.out) {
                eprintln!("{e}");
                return ExitCode::from(EXIT_FAILURE);
            }
            for w in &output.summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} records written to {}", output.table.records.len(), c.out.display());
            for r in output.table.records.iter().filter(|r| !r.ok()) {
                eprintln!(
                    "failed: {} at {} realization {}: {}",
                    r.scheme,
                    r.sweep_value,
                    r.realization,
                    r.failure.as_deref().unwrap_or("")
                );
            }
            if output.failures() > 0 {
                return ExitCode::from(EXIT_REALIZATION_FAILED);
            }
            if assert_ordering {
                let v = ordering_violations(&output.summary);
                if !v.is_empty() {
                    v.iter().for_each(|m| eprintln!("ordering violated: {m}"));
                    return ExitCode::from(EXIT_ORDERING);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Summarize { csv } => {
            let mut records = Vec::new();
            for path in &csv {
                match parse_csv(path) {
                    Ok(t) => records.extend(t.records),
                    Err(e) => {
                        eprintln!("{e}");
                        return ExitCode::from(EXIT_FAILURE);
                    }
                }
            }
            let s = summarize(&records);
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            let stdout = std::io::stdout();
            let label = PathBuf::from("<stdout>");
            let written = write_summary(&s, stdout.lock(), &label)
                .and_then(|_| {
                    println!();
                    write_comparisons(&s, stdout.lock(), &label)
                });
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
    }
}
