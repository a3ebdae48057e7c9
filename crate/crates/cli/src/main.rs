use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use qpm_cli::{run, Command, Format, RunOptions};

/// Interlaced bi-periodic PPLN pair-source simulator.
#[derive(Debug, Parser)]
#[command(name = "qpm", version)]
struct Cli {
    /// Scenario JSON; the built-in reference scenario when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Format of curve outputs; records are always JSON
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Print nothing on success
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let options = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    match run(&cli.command, &options) {
        Ok(outcome) => {
            if !cli.quiet {
                if let Some(lines) = outcome.summary.get("lines").and_then(|l| l.as_array()) {
                    for l in lines.iter().filter_map(|l| l.as_str()) {
                        println!("{l}");
                    }
                } else {
                    println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
                }
                for f in &outcome.files {
                    eprintln!("wrote {}", f.display());
                }
            }
            let strict = matches!(cli.command, Command::ReproducePaper { strict: true });
            if strict && outcome.criteria_passed == Some(false) {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
