use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgan_core::runner::{self, ExperimentConfig, VerifyOptions};
use fgan_core::{Error, Result};

/// Fence GAN anomaly detection experiments.
///
/// Relative dataset paths in a config resolve against $FGAN_DATA_DIR first,
/// then the config file's directory.
///
/// Exit codes: 0 ok, 1 I/O or numerical failure, 2 configuration error,
/// 3 data error, 4 incompatible checkpoint, 5 verification failure.
#[derive(Parser, Debug)]
#[command(name = "fgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Materialize the configured dataset splits as CSV.
    GenData(RunArgs),
    /// Train one model per seed and write checkpoints.
    Train(RunArgs),
    /// Score the test split and write metrics.
    Eval(RunArgs),
    /// Export discriminator scores on a 2-D grid.
    Grid(RunArgs),
    /// Run the gradient, loss and metric self-checks.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range: N, N..M (exclusive) or N..=M.
    #[arg(long, value_name = "RANGE")]
    seeds: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per gradient check.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long)]
    quiet: bool,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
        e => e,
    })?;
    if let Some(s) = args.seed {
        cfg.run.seeds = Some(vec![s]);
    }
    if let Some(r) = &args.seeds {
        cfg.run.seeds = Some(runner::parse_seed_range(r).map_err(|e| Error::Config(e.to_string()))?);
    }
    if let Some(out) = &args.out {
        cfg.run.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = load_config(&a)?;
            for dir in runner::cmd_gen_data(&cfg)? {
                if !a.quiet {
                    println!("{}", dir.display());
                }
            }
        }
        Command::Train(a) => {
            let cfg = load_config(&a)?;
            let every = (cfg.fgan.epochs / 20).max(1);
            let quiet = a.quiet;
            let outcomes = runner::cmd_train(&cfg, |seed, r| {
                if !quiet && (r.epoch % every == 0 || r.epoch == 1) {
                    eprintln!(
                        "seed {seed} epoch {:>6}  g_loss {:+.5}  d_loss {:.5}",
                        r.epoch, r.gen_loss, r.disc_loss
                    );
                }
            })?;
            for o in outcomes {
                if !a.quiet {
                    println!("{}", o.checkpoint.display());
                }
            }
        }
        Command::Eval(a) => {
            let cfg = load_config(&a)?;
            let outcome = runner::cmd_eval(&cfg, a.checkpoint.as_deref())?;
            if !a.quiet {
                print_json(&outcome.aggregate);
            }
        }
        Command::Grid(a) => {
            let cfg = load_config(&a)?;
            for path in runner::cmd_grid(&cfg, a.checkpoint.as_deref())? {
                if !a.quiet {
                    println!("{}", path.display());
                }
            }
        }
        Command::Verify(a) => {
            let report = runner::run_verify(&VerifyOptions {
                seed: a.seed,
                points: a.points,
                ..VerifyOptions::default()
            });
            if !a.quiet || !report.passed() {
                println!("{report}");
            }
            report.into_result()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fgan: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
