//! Command-line runner for the experiment pipeline.
//!
//! Exit status: 0 on success, 1 when a stage fails, 2 for usage and
//! configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmpo_core::config::{ExperimentConfig, Split};
use mmpo_core::metrics::ReportFormat;
use mmpo_core::pipeline::Pipeline;
use mmpo_core::{render_report, Algorithm, Error};

#[derive(Parser, Debug)]
#[command(name = "mmpo", version, about = "Adaptive thinking-mode policy optimization lab")]
struct Cli {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set rl.learning_rate=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the SFT, RL and evaluation datasets.
    GenData,
    /// Run supervised training from zero parameters.
    Sft,
    /// Run RL from the SFT checkpoint.
    Train {
        #[arg(long, value_parser = parse_algorithm, default_value = "mmpo")]
        algorithm: Algorithm,
    },
    /// Evaluate a checkpoint (default: this config's MMPO checkpoint).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Format printed to stdout; all formats are written to disk.
        #[arg(long, value_parser = parse_format, default_value = "table")]
        format: ReportFormat,
    },
    /// Train vanilla GRPO and MMPO from the same SFT checkpoint and compare.
    Compare {
        #[arg(long, value_parser = parse_format, default_value = "table")]
        format: ReportFormat,
    },
    /// Print the fully resolved config and its hash.
    ShowConfig,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    if let Some(path) = &cli.config {
        if !path.is_file() {
            return Err(Failure::Usage(anyhow::anyhow!(
                "config file not found: {}",
                path.display()
            )));
        }
    }
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        // Quoted so the value is always read as a string.
        overrides.push(format!("output_dir={}", toml::Value::String(out.display().to_string())));
    }
    ExperimentConfig::load(cli.config.as_deref(), &overrides).map_err(|e| Failure::Usage(e.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    let pipeline = Pipeline::new(config).map_err(|e| Failure::Usage(e.into()))?;
    let hash = pipeline.config_hash().to_string();
    let runtime = |e: Error| Failure::Runtime(e.into());
    match cli.command {
        Command::GenData => {
            let data = pipeline.gen_data().map_err(runtime)?;
            for (split, n) in [(Split::Sft, data.sft.len()), (Split::Rl, data.rl.len()), (Split::Eval, data.eval.len())] {
                println!("{}: {n} records -> {}", split.as_str(), pipeline.data_path(split).display());
            }
        }
        Command::Sft => {
            let out = pipeline.sft().map_err(runtime)?;
            for (epoch, loss) in out.loss_curve() {
                println!("epoch {epoch}: loss {loss:.6}");
            }
            println!("checkpoint -> {}", pipeline.sft_checkpoint_path().display());
        }
        Command::Train { algorithm } => {
            let out = pipeline.train(algorithm).map_err(runtime)?;
            if let Some(last) = out.stats.last() {
                println!(
                    "{}: {} steps, final reward {:.4}, accuracy reward {:.4}, kl {:.5}, avg tokens {:.1}",
                    algorithm.as_str(),
                    out.stats.len(),
                    last.reward_mean,
                    last.acc_reward_mean,
                    last.kl,
                    last.avg_tokens
                );
            }
            println!("checkpoint -> {}", pipeline.train_checkpoint_path(algorithm).display());
        }
        Command::Eval { checkpoint, format } => {
            let artifact = pipeline.eval(checkpoint.as_deref()).map_err(runtime)?;
            print!("{}", render_report(&artifact.report, format));
        }
        Command::Compare { format } => {
            let report = pipeline.compare().map_err(runtime)?;
            print!("{}", report.render(format));
        }
        Command::ShowConfig => {
            println!("# config_hash={hash}");
            print!("{}", pipeline.config().to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {:#}", e.context("pipeline stage failed"));
            ExitCode::from(1)
        }
    }
}
