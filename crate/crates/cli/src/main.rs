use clap::{Parser, Subcommand};
use dest_cli::{cmd_bench, cmd_count, cmd_eval, cmd_eval_oracle, cmd_train, exit_code_for, RunConfig};
use dest_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dest", about = "Simplified-transformer self-supervised depth estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic scenes and write a checkpoint plus a CSV loss log.
    Train {
        /// JSON run configuration; {} is valid (all fields have defaults)
        #[arg(long)]
        config: Option<PathBuf>,
        /// output directory for checkpoint/ and train_log.csv
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on held-out synthetic scenes.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// checkpoint directory written by `dest train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// first held-out scene seed
        #[arg(long, default_value_t = 9000)]
        seed: u64,
        /// number of scenes
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long)]
        variant: Option<String>,
        /// score ground truth against itself instead of a checkpoint
        #[arg(long)]
        oracle: bool,
    },
    /// Report Depth-Net parameters and MACs.
    Count {
        #[arg(long, default_value = "B3")]
        variant: String,
        #[arg(long, default_value_t = 192)]
        input_h: usize,
        #[arg(long, default_value_t = 640)]
        input_w: usize,
        /// print the machine-readable line only
        #[arg(long)]
        machine: bool,
    },
    /// Compare simplified vs softmax-baseline attention on one stage config.
    Bench {
        #[arg(long, default_value_t = 4096)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 8)]
        reduction: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Train { config, out, steps, seed, variant } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let report = cmd_train(&cfg, &out, &mut std::io::stdout().lock())?;
            eprintln!("trained {} steps; checkpoint at {}", report.stats.len(), out.join("checkpoint").display());
            Ok(())
        }
        Command::Eval { config, checkpoint, seed, scenes, variant, oracle } => {
            let mut cfg = load_config(&config)?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let seeds: Vec<u64> = (0..scenes as u64).map(|i| seed + i).collect();
            if oracle {
                let metrics = cmd_eval_oracle(&cfg, &seeds)?;
                println!("{}", metrics.record_line());
            } else {
                let report = cmd_eval(&cfg, &checkpoint, &seeds)?;
                println!("{}", report.metrics.record_line());
                println!("spearman={}", report.spearman);
            }
            Ok(())
        }
        Command::Count { variant, input_h, input_w, machine } => {
            let info = cmd_count(&variant, input_h, input_w)?;
            if machine {
                println!("{}", info.machine_line());
            } else {
                print!("{}", info.text());
                println!("{}", info.machine_line());
            }
            Ok(())
        }
        Command::Bench { tokens, channels, heads, reduction } => {
            let report = cmd_bench(tokens, channels, heads, reduction)?;
            print!("{}", report.csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dest: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
