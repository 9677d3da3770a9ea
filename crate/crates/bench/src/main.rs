use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use msrm_bench::compare::{budgets_at_target, load_all, summarise, summary_to_csv};
use msrm_bench::diagnose::diagnose;
use msrm_bench::results::write_atomic;
use msrm_bench::runner::{run, Sweep};
use msrm_bench::{init_threads, ExperimentConfig, Result};

/// Multivariate shortfall risk allocation experiments.
#[derive(Parser, Debug)]
#[command(name = "msrm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment configuration and write CSV/JSON results.
    Run {
        /// Path to the TOML configuration.
        config: PathBuf,
        /// Sweep over the configured seeds (default) or budgets.
        #[arg(long, value_enum, default_value_t = SweepArg::Seeds)]
        sweep: SweepArg,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge result files into an error-versus-work table.
    Compare {
        /// Result CSV files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the merged table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report the budget each method needs for this relative error.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Print damping, peak and oscillation diagnostics at the solution.
    Diagnose {
        /// Path to the TOML configuration.
        config: PathBuf,
        /// Emit JSON instead of a text table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    Seeds,
    Budgets,
}

fn execute(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Run { config, sweep, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sweep = match sweep {
                SweepArg::Seeds => Sweep::Seeds,
                SweepArg::Budgets => Sweep::Budgets,
            };
            let res = run(&cfg, sweep, out)?;
            for r in &res.records {
                println!(
                    "{} {} seed={} budget={} eps_stat={:.3e} R={:.6} m=[{}] J={}",
                    r.row.experiment,
                    r.row.method,
                    r.row.seed,
                    r.row.budget,
                    r.row.eps_stat,
                    r.row.total_risk,
                    r.row.m_star.replace(';', ", "),
                    r.row.iterations
                );
            }
            println!("wrote {} and {}", res.csv.display(), res.json.display());
        }
        Command::Compare { files, out, target } => {
            let rows = load_all(&files)?;
            let summary = summarise(&rows);
            let bytes = summary_to_csv(&summary)?;
            match out {
                Some(p) => write_atomic(&p, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            if let Some(t) = target {
                eprintln!("budget needed for eps_rel = {t:e}:");
                for r in budgets_at_target(&summary, t) {
                    eprintln!(
                        "  {} {}: slope {:.3}, budget {:.3e}",
                        r.experiment, r.method, r.slope, r.budget_at_target
                    );
                }
            }
        }
        Command::Diagnose { config, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let d = diagnose(&cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&d)?);
            } else {
                print!("{d}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
