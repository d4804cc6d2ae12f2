//! `voxface`: dataset synthesis, two-stage training, generation and
//! evaluation from one command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::{Table, Value};

use config::{set_path, Preset};

/// Bad flags, configuration or missing inputs named on the command line.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "voxface", version, about = "Voice-conditioned face generation toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML configuration file layered over the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to a timestamped directory under `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parent directory of timestamped run directories.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic paired audio/face dataset.
    SynthData(SynthArgs),
    /// Train the speech and face encoders on K-way matching.
    TrainInference(TrainInferenceArgs),
    /// Train the conditional generator and discriminator.
    TrainGan(TrainGanArgs),
    /// Generate faces from a speech recording.
    Generate(GenerateArgs),
    /// Render an interpolation row between two conditions or two latents.
    Interpolate(InterpolateArgs),
    /// Run one quantitative analysis and write its JSON report.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    identities: Option<usize>,
    /// Clips per identity.
    #[arg(long)]
    clips: Option<usize>,
    /// Frames per clip.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Vf,
    Fv,
}

#[derive(Args, Debug)]
struct TrainInferenceArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Continue from the training state in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct TrainGanArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory of `train-inference` holding the encoder checkpoints.
    #[arg(long)]
    encoders: Option<PathBuf>,
    /// Train with the relativistic loss only.
    #[arg(long)]
    no_mismatched_identity_loss: bool,
    /// Start from random encoders instead of the trained ones.
    #[arg(long)]
    skip_transfer: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Run directory of `train-gan`.
    #[arg(long)]
    gan: PathBuf,
    /// WAV file used as the condition.
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    /// Latent truncation threshold; `inf` disables it.
    #[arg(long)]
    truncation: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WhichArg {
    ConditionC,
    LatentZ,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[arg(long)]
    gan: PathBuf,
    #[arg(long, value_enum)]
    which: WhichArg,
    /// First endpoint for `condition-c`, the fixed condition for `latent-z`.
    #[arg(long)]
    speech: PathBuf,
    /// Second endpoint for `condition-c`.
    #[arg(long)]
    speech_b: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    truncation: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Qta1,
    Qta1Control,
    Qta2Vf,
    Qta2Fv,
    Qta3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ComparatorArg {
    GroundTruth,
    OtherGenerator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    L1,
    L2,
    Cd,
    All,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory of `train-inference` (the judging encoders).
    #[arg(long)]
    encoders: PathBuf,
    /// Run directory of `train-gan`.
    #[arg(long)]
    gan: PathBuf,
    /// Second generator for `qta2-vf --comparator other-generator`.
    #[arg(long)]
    other_gan: Option<PathBuf>,
    #[arg(long, value_enum)]
    comparator: Option<ComparatorArg>,
    #[arg(long, value_enum, default_value = "all")]
    metric: MetricArg,
    /// Gallery manifest for `qta3`; defaults to the test split.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long)]
    n_pairs: Option<usize>,
    #[arg(long)]
    truncation: Option<f64>,
}

fn put<T: Into<Value>>(t: &mut Table, path: &str, v: Option<T>) {
    if let Some(v) = v {
        set_path(t, path, v.into());
    }
}

fn int(v: Option<usize>) -> Option<i64> {
    v.map(|x| x as i64)
}

impl Cli {
    /// Flag layer of the configuration.
    fn flag_layer(&self) -> Table {
        let mut t = Table::new();
        let g = &self.global;
        put(&mut t, "preset", g.preset.map(|p| if p == Preset::Toy { "toy" } else { "full" }));
        put(&mut t, "seed", g.seed.map(|s| s as i64));
        put(&mut t, "output_dir", g.output_dir.as_ref().map(|p| p.display().to_string()));
        match &self.command {
            Command::SynthData(a) => {
                put(&mut t, "synth.n_identities", int(a.identities));
                put(&mut t, "synth.clips_per_identity", int(a.clips));
                put(&mut t, "synth.frames_per_clip", int(a.frames));
                put(&mut t, "synth.image_size", int(a.image_size));
            }
            Command::TrainInference(a) => {
                put(&mut t, "data.manifest", a.manifest.as_ref().map(|p| p.display().to_string()));
                put(&mut t, "inference.mode", a.mode.map(|m| if matches!(m, ModeArg::Vf) { "V-F" } else { "F-V" }));
                put(&mut t, "inference.k", int(a.k));
                put(&mut t, "inference.batch_size", int(a.batch_size));
                put(&mut t, "inference.max_epochs", int(a.max_epochs));
                put(&mut t, "inference.lr_init", a.lr);
            }
            Command::TrainGan(a) => {
                put(&mut t, "data.manifest", a.manifest.as_ref().map(|p| p.display().to_string()));
                put(&mut t, "gan.max_iters", int(a.iters));
                put(&mut t, "gan.batch_size", int(a.batch_size));
                if a.no_mismatched_identity_loss {
                    put(&mut t, "gan.use_mismatched_identity_loss", Some(false));
                }
                if a.skip_transfer {
                    put(&mut t, "gan.skip_transfer", Some(true));
                }
            }
            Command::Generate(a) => {
                put(&mut t, "eval.n_generate", int(a.n));
                put(&mut t, "eval.truncation", a.truncation);
            }
            Command::Interpolate(a) => {
                put(&mut t, "eval.interpolation_steps", int(a.steps));
                put(&mut t, "eval.truncation", a.truncation);
            }
            Command::Evaluate(a) => {
                put(&mut t, "data.manifest", a.manifest.as_ref().map(|p| p.display().to_string()));
                put(&mut t, "eval.n_pairs", int(a.n_pairs));
                put(&mut t, "eval.truncation", a.truncation);
            }
        }
        t
    }

    fn command_name(&self) -> &'static str {
        match &self.command {
            Command::SynthData(_) => "synth-data",
            Command::TrainInference(_) => "train-inference",
            Command::TrainGan(_) => "train-gan",
            Command::Generate(_) => "generate",
            Command::Interpolate(_) => "interpolate",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

/// Maps the first recognised error in the chain to an exit status.
fn exit_status(err: &anyhow::Error) -> u8 {
    use voxface::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidInput(_) => EXIT_USAGE,
                E::Checkpoint(_) => EXIT_CHECKPOINT,
                E::ZeroEnergy | E::InsufficientData(_) | E::InvalidQuery(_) | E::Format(_) | E::Io { .. } => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
