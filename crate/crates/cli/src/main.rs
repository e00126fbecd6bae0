use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stattrunc_cli::{emit, run_experiment, ExperimentConfig, Format};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "stattrunc", version, about = "Certified truncation bounds for Markov chain stationary expectations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML config file.
    Run {
        config: PathBuf,
        /// Output file (default: the config's output.path, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Cross-check sweep points with a <= 2000 against the oracle.
        #[arg(long)]
        validate: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        format,
        validate,
    } = Cli::parse().command;

    let cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match run_experiment(&cfg, validate) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for row in result.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!("a={}: {}", row.a, row.status);
    }

    let format = match format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Json) => Format::Json,
        None => cfg.format,
    };
    let path = out.or(cfg.output_path.clone());
    if let Err(e) = emit(&result.rows, format, path.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    if result.all_failed() {
        return ExitCode::from(EXIT_NUMERICAL);
    }
    ExitCode::SUCCESS
}
