use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedunlearn_harness::config::{parse_config, parse_method};
use fedunlearn_harness::error::CliResult;
use fedunlearn_harness::pipeline;

#[derive(Parser)]
#[command(
    name = "fedunlearn",
    about = "Deterministic federated-learning simulator with an unlearning benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Client,
    Class,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset pair as IDX files.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 784)]
        dim: usize,
        #[arg(long = "per-class", default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 0.15)]
        spread: f64,
        #[arg(long = "test-per-class", default_value_t = 100)]
        test_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run federated training; writes model, history, and loss traces.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one unlearning method from saved training state.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// Metric report for one saved model against a reference model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Full benchmark pipeline; emits results.csv / results.json.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        level: Option<Level>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData {
            out,
            classes,
            dim,
            per_class,
            spread,
            test_per_class,
            seed,
        } => {
            pipeline::generate_data(&out, classes, dim, per_class, spread, test_per_class, seed)?;
            println!("wrote IDX train/test pair to {}", out.display());
            Ok(())
        }
        Command::Train { config } => {
            let cfg = parse_config(&config)?;
            pipeline::train_and_save(&cfg)?;
            println!("training artifacts written to {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Unlearn { config, method } => {
            let cfg = parse_config(&config)?;
            let method = parse_method(&method)?;
            pipeline::unlearn_from_saved(&cfg, method)
        }
        Command::Evaluate {
            model,
            reference,
            config,
        } => {
            let cfg = parse_config(&config)?;
            let report = pipeline::evaluate_model(&cfg, &model, &reference)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::Benchmark { config, level } => {
            let cfg = parse_config(&config)?;
            let level = level.unwrap_or(
                match cfg.forget {
                    fedunlearn_harness::config::ForgetSection::Class { .. } => Level::Class,
                    _ => Level::Client,
                },
            );
            let table = match level {
                Level::Client => pipeline::run_client_level_benchmark(&cfg)?,
                Level::Class => pipeline::run_class_level_benchmark(&cfg)?,
            };
            pipeline::emit_report(&table, &cfg, &cfg.output_dir)?;
            println!(
                "benchmark complete: {} rows -> {}",
                table.rows.len(),
                cfg.output_dir.join("results.csv").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    fedunlearn_harness::init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
