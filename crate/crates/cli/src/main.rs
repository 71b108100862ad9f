use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tgt::condition::ConditionMode;
use tgt_cli::{exit_code, CONFIG_ENV};

#[derive(Parser)]
#[command(name = "tgt", version, about = "Trailer generation from movie shot embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CondMode {
    Encoded,
    Contextualized,
}

impl From<CondMode> for ConditionMode {
    fn from(m: CondMode) -> Self {
        match m {
            CondMode::Encoded => ConditionMode::Encoded,
            CondMode::Contextualized => ConditionMode::Contextualized,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic movie/trailer corpus with train/val/test splits.
    GenData {
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Attach a condition vector to every pair.
        #[arg(long)]
        condition: bool,
    },
    /// Train on the train split; writes a checkpoint and a per-step loss log.
    Train {
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its stored configuration wins over flags.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Total optimizer steps (overrides epochs).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_trailerness_encoder: bool,
        #[arg(long)]
        no_context_encoder: bool,
        /// Use the condition vectors stored with the data.
        #[arg(long, value_enum)]
        condition: Option<CondMode>,
        /// Stop (and checkpoint) after this many steps.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Decode a split and score it against the ground truth and a random baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        baseline_trials: usize,
        #[arg(long, default_value_t = 0)]
        baseline_seed: u64,
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Decode one movie file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        movie: PathBuf,
        #[arg(long)]
        condition: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        #[arg(long)]
        max_len: Option<usize>,
        /// Output JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient in 64-bit arithmetic.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_sign_flip: Option<String>,
    },
}

fn run(cli: Cli) -> tgt::Result<ExitCode> {
    match cli.command {
        Command::GenData { config, out, count, seed, condition } => {
            let m = tgt_cli::gen_data(&tgt_cli::GenDataArgs { config, out: out.clone(), count, seed, condition })?;
            println!("wrote {} ({})", out.display(), m.outputs.join(", "));
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            lr,
            epochs,
            steps,
            batch_size,
            seed,
            no_trailerness_encoder,
            no_context_encoder,
            condition,
            until,
        } => {
            let args = tgt_cli::TrainArgs {
                config,
                data,
                out: out.clone(),
                resume,
                lr,
                epochs,
                steps,
                batch_size,
                seed,
                no_trailerness_encoder,
                no_context_encoder,
                condition_mode: condition.map(Into::into),
                until,
            };
            tgt_cli::train(&args)?;
            println!("wrote {}", out.join(tgt_cli::CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, data, split, k, out, baseline_trials, baseline_seed, oracle } => {
            let args = tgt_cli::EvalArgs { checkpoint, data, split, ks: k, out, baseline_trials, baseline_seed, oracle };
            let report = tgt_cli::eval(&args)?;
            print!("{}", tgt::metrics::render_table(&[&report.model, &report.random]));
        }
        Command::Infer { checkpoint, movie, condition, topk, max_len, out } => {
            let args = tgt_cli::InferArgs { checkpoint, movie, condition, topk, max_len, out: out.clone() };
            let output = tgt_cli::infer(&args)?;
            if out.is_none() {
                println!("{}", serde_json::to_string_pretty(&output)?);
            }
        }
        Command::Gradcheck { seeds, tol, h, out, inject_sign_flip } => {
            let summary = tgt_cli::gradcheck(&tgt_cli::GradcheckArgs { seeds, tol, h, sign_flip: inject_sign_flip, out })?;
            print!("{}", tgt_cli::render_gradcheck(&summary));
            if !summary.passed {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(3));
            }
            println!("all gradient checks passed over {seeds} seeds");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
