//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "motion2d", version, about = "Two-person 2-D motion generation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural toy corpus and its manifest.
    Synth(SynthArgs),
    /// Filter a manifest through the three cleaning rules.
    Clean(CleanArgs),
    /// Stratified train/test split of a manifest.
    Split(SplitArgs),
    /// Train the evaluator, then both denoiser stages.
    Train(TrainArgs),
    /// Generate motions from a checkpoint.
    Sample(SampleArgs),
    /// Score generated motions against a test manifest.
    Eval(EvalArgs),
    /// Draw a motion file as SVG frames or a GIF.
    Render(RenderArgs),
    /// Summarize a manifest.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Shifted copies of each toy action.
    #[arg(long, default_value_t = 1)]
    pub variants: usize,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Continue from the last checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One generation per record, matching caption, length and person count.
    #[arg(long, conflicts_with = "caption", required_unless_present = "caption")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub caption: Option<String>,
    #[arg(long, requires = "caption")]
    pub frames: Option<usize>,
    #[arg(long, requires = "caption", value_parser = clap::value_parser!(u8).range(1..=2))]
    pub person_count: Option<u8>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of generated motion files named after test source ids.
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub evaluator: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderFormat {
    SvgFrames,
    Gif,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub motion: PathBuf,
    #[arg(long, value_enum, default_value = "svg-frames")]
    pub format: RenderFormat,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub fps: Option<u16>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Clean(a) => commands::clean(&a),
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Render(a) => commands::render(&a),
        Command::Stats(a) => commands::stats(&a),
    }
}

/// Parse, run and map the outcome to an exit code. Errors go to stderr as
/// one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_owned()).to_json_line());
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
