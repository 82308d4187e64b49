//! `skd`: train, evaluate, sweep and report self-distillation runs.

mod config;
mod exit;
mod manifest;
mod report;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skd_core::data::Split;

#[derive(Parser)]
#[command(name = "skd", version, about = "Self-distillation experiments: train, eval, sweep, report")]
#[command(after_help = "The dataset root is read from SKD_DATA_ROOT (default: ./data).\n\
Exit codes: 0 success, 2 config error, 3 training diverged, 4 I/O error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run; artifacts go to <output_dir>/<run-id>.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Repeat a run that already completed with the same configuration.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a run's checkpoint and append the result to its eval.csv.
    Eval {
        /// Run directory holding config.toml and checkpoint/.
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Checkpoint directory, if not <run_dir>/checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Config naming the dataset, if not <run_dir>/config.toml.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the base config once per grid point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`; repeat for a multi-axis grid. Dotted keys reach sections (`lr.initial`).
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Grid points trained concurrently, each in its own process.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate and plot finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn execute(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Train { config, out, seed, force } => {
            let resolved = config::load_resolved(&config, out.as_deref(), seed)?;
            let summary = run::train(&resolved, force)?;
            println!("{}  final test top-1 {:.2}%", summary.run_dir.display(), summary.final_test_top1 * 100.0);
        }
        Command::Eval { run_dir, split, checkpoint, config } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let e = run::eval(&run_dir, checkpoint.as_deref(), config.as_deref(), split)?;
            println!(
                "epoch {} {}: top-1 {:.4} mean loss {:.6} ranked variance {:.6} (logged in {})",
                e.row.epoch,
                e.row.split,
                e.row.top1_accuracy,
                e.row.mean_loss,
                e.row.ranked_output_variance,
                e.log_path.display()
            );
        }
        Command::Sweep { config, axes, out, seed, jobs } => {
            let axes = axes.iter().map(|a| a.parse()).collect::<Result<Vec<sweep::Axis>, _>>()?;
            let exe = std::env::current_exe()?;
            let outcome = sweep::sweep(&sweep::SweepOptions {
                base: &config,
                axes: &axes,
                out: out.as_deref(),
                seed,
                jobs,
                exe: &exe,
            })?;
            let failed = outcome.cells.iter().filter(|c| c.exit_code != exit::SUCCESS).count();
            println!("{} cells, {failed} failed; summary in {}", outcome.cells.len(), outcome.summary.display());
            if let Some(best) = outcome.best {
                let cell = &outcome.cells[best];
                let setting: Vec<String> =
                    axes.iter().zip(&cell.values).map(|(a, v)| format!("{}={v}", a.key)).collect();
                println!(
                    "best: {} with final test top-1 {:.2}%",
                    setting.join(", "),
                    cell.final_test_top1.unwrap_or(f64::NAN) * 100.0
                );
            }
            return Ok(outcome.exit_code());
        }
        Command::Report { runs, out } => {
            let (report, written) = report::report(&runs, &out)?;
            print!("{}", report.markdown());
            for path in written {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit::code_for(&err)
        }
    };
    ExitCode::from(code as u8)
}
