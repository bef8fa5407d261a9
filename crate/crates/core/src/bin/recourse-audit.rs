use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recourse_audit::cli::{cmd_audit, cmd_compare, cmd_rank, CliError, Overrides};

#[derive(Parser)]
#[command(name = "recourse-audit", version, about = "Audit a classifier for unfair difficulty of recourse across subgroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an audit described by a TOML config and write text and JSON reports.
    Audit {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Minimum subgroup support in (0, 1].
        #[arg(long)]
        support: Option<f64>,
        #[arg(long)]
        action_support: Option<f64>,
        #[arg(long)]
        text_out: Option<PathBuf>,
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// CSCs per definition in the text report.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Print the most unfair CSCs of one definition from a JSON report.
    Rank {
        report: PathBuf,
        definition: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Print the ranking-analysis and aggregated-rankings tables of a JSON report.
    Compare { report: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Audit {
            config,
            workers,
            support,
            action_support,
            text_out,
            json_out,
            top,
        } => {
            let overrides = Overrides {
                workers,
                subgroup_support: support,
                action_support,
                text_out,
                json_out,
                top,
            };
            let out = cmd_audit(&config, &overrides)?;
            eprintln!(
                "audited {} subgroups under {} definitions; wrote {} and {}",
                out.report.subgroups.len(),
                out.report.definitions.len(),
                out.text.display(),
                out.json.display()
            );
        }
        Command::Rank { report, definition, top } => print!("{}", cmd_rank(&report, &definition, top)?),
        Command::Compare { report } => print!("{}", cmd_compare(&report)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
