use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod outputs;

#[derive(Parser)]
#[command(
    name = "sdts",
    version,
    about = "Multi-frame quality enhancement for compressed video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a raw clip with the block-DCT codec stand-in and write labels.
    Degrade(DegradeArgs),
    /// Generate a synthetic raw clip.
    Synth(SynthArgs),
    /// Write a freshly initialised checkpoint (the identity network).
    Init(InitArgs),
    /// Run one or all training phases.
    Train(TrainArgs),
    /// Enhance a degraded clip with the LQF and HQF checkpoints.
    Enhance(EnhanceArgs),
    /// Measure a clip and write the per-frame report and plot.
    Eval(EvalArgs),
}

/// Run configuration: defaults, then the file, then `--set`, then flags.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct DegradeArgs {
    /// Directory of PGM frames, or a raw planar 4:2:0 file (needs --dims).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_parser = ["q37", "q32"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub period: Option<usize>,
    /// Frame size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<(usize, usize)>,
    /// Number of frames to read.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Kind {
    Translate,
    Still,
    Ramp,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "translate")]
    pub kind: Kind,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, value_parser = parse_dims, default_value = "32x32")]
    pub dims: (usize, usize),
    /// Horizontal motion per frame in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Mc,
    Lqf,
    Hqf,
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainVariant {
    Lqf,
    Hqf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long, value_enum)]
    pub variant: Option<TrainVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Phase-1 checkpoint; required by phase 2.
    #[arg(long, required_if_eq("phase", "2"))]
    pub mc_ckpt: Option<PathBuf>,
    /// Phase-2 (or any full) checkpoint; required by phase 3.
    #[arg(long, required_if_eq("phase", "3"))]
    pub partial_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV. Defaults to the checkpoint path plus `.loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long)]
    pub ckpt_lqf: PathBuf,
    #[arg(long)]
    pub ckpt_hqf: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub period: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub degraded: PathBuf,
    #[arg(long)]
    pub enhanced: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("dims must be positive".into());
    }
    Ok((w, h))
}

/// The error chain, skipping causes already spelled out by their parent
/// (library errors embed their source in their own message).
fn message(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Degrade(a) => commands::degrade(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Init(a) => commands::init(&a),
        Command::Train(a) => commands::train(&a),
        Command::Enhance(a) => commands::enhance(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::FAILURE
        }
    }
}
