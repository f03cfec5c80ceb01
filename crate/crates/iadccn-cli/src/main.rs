//! Command-line harness for the counting pipeline: synthetic data
//! generation, training, evaluation, inference, density rendering,
//! gradient verification, and the ablation study.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nfile formats: IADM v1 (density maps), IAWT v1 (weights)"
);

#[derive(Parser)]
#[command(name = "iadccn", version, long_version = LONG_VERSION)]
#[command(about = "Crowd counting by density-map regression with inverse attention")]
struct Cli {
    /// Worker-thread cap. All compute paths are single-threaded, so every
    /// value (including 1) yields bitwise-identical results.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Floating-point width for model math (f64 is the verification mode).
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationChoice {
    /// Plain base network (no attention, no segmentation, no mining).
    Base,
    /// Base network plus the auxiliary segmentation head.
    S,
    /// Base network plus the inverse attention block.
    Iab,
    /// Inverse attention plus hard sample mining.
    IabHsm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckLevel {
    /// Per-operation finite-difference checks.
    Ops,
    /// End-to-end model loss gradient check.
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset (images + annotations.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        /// Scene extents as H W.
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
        hw: Vec<usize>,
        /// Inclusive head-count range as LO HI.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [3, 10])]
        count_range: Vec<usize>,
        /// Head radius range in pixels as LO HI.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [2.5, 4.5])]
        head_radius: Vec<f64>,
        /// Distractor blobs per head.
        #[arg(long, default_value_t = 0.0)]
        clutter: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Train on a dataset directory containing annotations.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Experiment config file (key=value lines); defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Force one of the studied configurations.
        #[arg(long, value_enum)]
        ablation: Option<AblationChoice>,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Additional key=value overrides, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue from an existing weight file instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a weight file on a dataset; writes per-image CSV + summary.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Config describing the weight file's architecture; defaults to
        /// config.txt next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one image through the model; writes the density map + heatmap.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a density file to an 8-bit PGM heatmap.
    Render {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify gradients against finite differences; nonzero exit on failure.
    Gradcheck {
        #[arg(long, value_enum)]
        level: CheckLevel,
    },
    /// Train and evaluate the four studied configurations on one dataset.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of images held out for the shared test set.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn exit_code(e: &iadccn::Error) -> i32 {
    use iadccn::Error::*;
    match e {
        Config(_) => 2,
        Data(_) | Parse(_) | Io(_) | Dim(_) => 3,
        Numeric(_) | Contract(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        std::process::exit(2);
    }
    let precision = cli.precision;
    let result = match cli.command {
        Command::Synth {
            out,
            n,
            hw,
            count_range,
            head_radius,
            clutter,
            seed,
        } => commands::cmd_synth(&out, n, &hw, &count_range, &head_radius, clutter, seed),
        Command::Train {
            data,
            config,
            out,
            ablation,
            seed,
            set,
            resume,
        } => dispatch(precision, |p| match p {
            PrecisionTag::F32 => commands::cmd_train::<f32>(
                &data, config.as_deref(), &out, ablation, seed, &set, resume.as_deref(),
            ),
            PrecisionTag::F64 => commands::cmd_train::<f64>(
                &data, config.as_deref(), &out, ablation, seed, &set, resume.as_deref(),
            ),
        }),
        Command::Eval {
            data,
            weights,
            config,
            out,
        } => dispatch(precision, |p| match p {
            PrecisionTag::F32 => commands::cmd_eval::<f32>(&data, &weights, config.as_deref(), &out),
            PrecisionTag::F64 => commands::cmd_eval::<f64>(&data, &weights, config.as_deref(), &out),
        }),
        Command::Infer {
            image,
            weights,
            config,
            out,
        } => dispatch(precision, |p| match p {
            PrecisionTag::F32 => {
                commands::cmd_infer::<f32>(&image, &weights, config.as_deref(), &out)
            }
            PrecisionTag::F64 => {
                commands::cmd_infer::<f64>(&image, &weights, config.as_deref(), &out)
            }
        }),
        Command::Render { density, out } => commands::cmd_render(&density, &out),
        Command::Gradcheck { level } => commands::cmd_gradcheck(level),
        Command::Ablate {
            data,
            config,
            out,
            seed,
            holdout,
            set,
        } => dispatch(precision, |p| match p {
            PrecisionTag::F32 => {
                commands::cmd_ablate::<f32>(&data, config.as_deref(), &out, seed, holdout, &set)
            }
            PrecisionTag::F64 => {
                commands::cmd_ablate::<f64>(&data, config.as_deref(), &out, seed, holdout, &set)
            }
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

enum PrecisionTag {
    F32,
    F64,
}

fn dispatch(
    p: Precision,
    f: impl FnOnce(PrecisionTag) -> iadccn::Result<()>,
) -> iadccn::Result<()> {
    match p {
        Precision::F32 => f(PrecisionTag::F32),
        Precision::F64 => f(PrecisionTag::F64),
    }
}

pub(crate) use {AblationChoice as Ablation, CheckLevel as Level};
