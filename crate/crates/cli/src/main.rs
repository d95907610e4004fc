mod eval;
mod model;
mod selfcheck;

use clap::{Parser, Subcommand, ValueEnum};
use gatedseg::{Binarize, Preset};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gatedseg",
    version,
    about = "Gated encoder-decoder segmentation and mask evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Score a directory of predictions against a directory of ground truths.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Worker threads (default: all logical cores).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: Option<u64>,
        /// Threshold for PA/IoU/Dice/BER: a number in [0, 1] or `adaptive`.
        #[arg(long, default_value = "0.5", value_parser = parse_binarize)]
        binarize: Binarize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        output: OutputFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict a mask with a trained model.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Depth map; required by two-stream weights.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train on the built-in synthetic rectangle set and save the weights.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        steps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "m5", value_parser = parse_preset)]
        config: Preset,
    },
    /// Print the gate values a model produces for one input.
    Gates {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Run the built-in consistency checks.
    Selfcheck {
        /// Skip the slower model-level checks.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_binarize(s: &str) -> Result<Binarize, String> {
    s.parse().map_err(|e: gatedseg::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: gatedseg::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval {
            pred,
            gt,
            jobs,
            binarize,
            output,
            out,
        } => eval::run(&pred, &gt, jobs.map(|j| j as usize), binarize, output, out.as_deref()),
        Command::Infer {
            weights,
            input,
            depth,
            output,
        } => model::infer(&weights, &input, depth.as_deref(), &output),
        Command::TrainToy {
            out,
            steps,
            seed,
            config,
        } => model::train_toy(&out, steps as usize, seed, config),
        Command::Gates { weights, input, depth } => model::gates(&weights, &input, depth.as_deref()),
        Command::Selfcheck { quick } => selfcheck::run(quick),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain, skipping causes whose text an outer message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}
