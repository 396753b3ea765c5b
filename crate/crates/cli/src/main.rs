//! `nasp`: the reconstruction pipeline, one subcommand per stage.

mod config;
mod error;
mod evaluate;
mod masks;
mod plot;
mod reconstruct;
mod report;
mod run;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "nasp", version, about = "Next-acceleration-scale MRI reconstruction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write sampling masks as MRMK files with a PNG rendering each.
    MakeMasks(masks::MaskArgs),
    /// Generate a synthetic phantom dataset with a manifest.
    GenData(run::GenDataArgs),
    /// Train the multi-level tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train the student and the privileged teacher transformers.
    TrainAr(TrainArArgs),
    /// Distill the teacher into the student on student rollouts.
    Distill(DistillArgs),
    /// Reconstruct slices from their 32x inputs.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Score reconstructions against reference slices.
    Evaluate(evaluate::EvaluateArgs),
    /// Tables and bar charts across evaluation runs.
    Report(report::ReportArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; keys not given take the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Draw each acceleration level's mask independently instead of nesting them.
    #[arg(long)]
    independent_masks: bool,
}

impl ConfigArg {
    fn load(&self) -> CliResult<config::RunConfig> {
        let mut cfg = config::RunConfig::load(self.config.as_deref())?;
        cfg.data.pyramid.independent_masks |= self.independent_masks;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainTokenizerArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Student checkpoint, or a train-ar run directory.
    #[arg(long)]
    student: PathBuf,
    /// Teacher checkpoint, or a train-ar run directory.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::MakeMasks(a) => masks::run(&a),
        Command::GenData(a) => run::gen_data(&a),
        Command::TrainTokenizer(a) => {
            let cfg = a.config.load()?;
            train::tokenizer(&cfg, &a.data, &a.out)
        }
        Command::TrainAr(a) => {
            let cfg = a.config.load()?;
            train::transformers(&cfg, &a.tokenizer, &a.data, &a.out)
        }
        Command::Distill(a) => {
            let cfg = a.config.load()?;
            train::distillation(&cfg, &a.student, &a.teacher, &a.tokenizer, &a.data, &a.out)
        }
        Command::Reconstruct(a) => reconstruct::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Report(a) => report::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
