use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dqnn::cli::{self, Overrides, EXIT_CHECK_FAILED, EXIT_OK};
use dqnn::config::ExperimentConfig;
use dqnn::{build_architecture, Error};

#[derive(Parser)]
#[command(name = "dqnn", version, about = "Distributed quantum neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> dqnn::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        Overrides { seed: self.seed, out_dir: self.out.clone(), threads: self.threads }.apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured training set and save a checkpoint
    Train(RunArgs),
    /// k-fold cross-validation
    Crossval(RunArgs),
    /// Score a checkpoint on the configured evaluation set
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare adjoint, parameter-shift and finite-difference gradients
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = cli::GRADCHECK_MAX_QUBITS)]
        max_qubits: usize,
    },
    /// Print the gate listing of a shard architecture
    Describe {
        #[arg(long)]
        qubits: usize,
        #[arg(long)]
        features: usize,
    },
}

fn run(command: Command) -> dqnn::Result<i32> {
    match command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let (_, summary) = cli::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Crossval(args) => {
            let cfg = args.load()?;
            let summary = cli::cmd_crossval(&cfg)?;
            for (k, m) in summary.folds.iter().enumerate() {
                println!("fold {}: accuracy {:.4} loss {:.4}", k + 1, m.accuracy, m.loss);
            }
            println!(
                "accuracy {:.4} ± {:.4}  loss {:.4} ± {:.4}",
                summary.mean_accuracy, summary.std_accuracy, summary.mean_loss, summary.std_loss
            );
        }
        Command::Evaluate { run, checkpoint } => {
            let cfg = run.load()?;
            let m = cli::cmd_evaluate(&cfg, &checkpoint)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        }
        Command::Gradcheck { trials, tolerance, seed, max_qubits } => {
            let report = cli::cmd_gradcheck(trials, tolerance, seed, max_qubits)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            if !report.passed {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Describe { qubits, features } => {
            let arch = build_architecture(qubits, features)?;
            print!("{}", arch.listing());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(p) => p,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(cli::EXIT_VALIDATION as u8) } else { ExitCode::SUCCESS };
        }
    };
    let code = match run(parsed.command) {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn report(e: &Error) {
    match e {
        Error::ConfigList(items) => {
            eprintln!("error: invalid configuration");
            for item in items {
                eprintln!("  - {item}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}
