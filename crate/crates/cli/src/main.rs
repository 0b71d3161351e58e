//! `audiohide`: hide long audio clips inside still images and get them
//! back, train the embedding stacks, and measure capacity/distortion
//! trade-offs.

mod commands;
mod container;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use audiohide_core::pack::SecretFormat;
use clap::{Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "audiohide",
    version,
    about = "Conceal long audio clips inside images with an invertible coupling network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an embedding stack (or a nested cascade) on an image/audio corpus.
    Train {
        /// Flat key-value training configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Directory of cover images (PNG/JPEG), scanned recursively.
        #[arg(long)]
        image: PathBuf,
        /// Directory of WAV clips, scanned recursively.
        #[arg(long)]
        audio: PathBuf,
        /// Output checkpoint path; a per-epoch loss CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config image size (160 or 64).
        #[arg(long)]
        size: Option<usize>,
        /// Nesting depth: 1 trains a single stack.
        #[arg(long, default_value_t = 1)]
        depth: usize,
    },
    /// Hide one audio clip inside one image, writing a container PNG.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Omit the metadata text chunk (reveal will need --duration).
        #[arg(long)]
        no_meta: bool,
    },
    /// Recover the hidden clip from a container PNG.
    Reveal {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Container image produced by embed.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clip duration in seconds, for metadata-free containers.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Hide one clip per layer of a nested cascade.
    NestedEmbed {
        /// One nested checkpoint, or one single-layer checkpoint per layer
        /// in order.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// One clip per layer, level 1 first.
        #[arg(long = "audio", required = true)]
        audio: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_meta: bool,
    },
    /// Recover clips from a nested container down to an access level.
    NestedReveal {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// Output prefix; level k lands at <prefix>.levelk.wav.
        #[arg(long)]
        out: PathBuf,
        /// How many layers to decode.
        #[arg(long)]
        level: usize,
        /// Per-layer durations in seconds, for metadata-free containers.
        #[arg(long = "duration")]
        durations: Vec<f64>,
    },
    /// Print the channel arithmetic for a clip duration.
    Info {
        /// Clip duration in seconds.
        #[arg(long)]
        duration: f64,
        /// Secret format: mel, raw or stft.
        #[arg(long, default_value = "mel")]
        format: SecretFormat,
        /// Image size (160 or 64).
        #[arg(long, default_value_t = 160)]
        size: usize,
    },
    /// Sweep trained checkpoints over a corpus and tabulate quality.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Output CSV path; the table also prints to stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(command: Command) -> Result<commands::Outcome, CliError> {
    match command {
        Command::Train {
            config,
            image,
            audio,
            out,
            seed,
            size,
            depth,
        } => commands::cmd_train(&config, &image, &audio, &out, seed, size, depth),
        Command::Embed {
            checkpoint,
            image,
            audio,
            out,
            no_meta,
        } => commands::cmd_embed(&checkpoint, &image, &audio, &out, no_meta),
        Command::Reveal {
            checkpoint,
            image,
            out,
            duration,
        } => commands::cmd_reveal(&checkpoint, &image, &out, duration),
        Command::NestedEmbed {
            checkpoints,
            image,
            audio,
            out,
            no_meta,
        } => commands::cmd_nested_embed(&checkpoints, &image, &audio, &out, no_meta),
        Command::NestedReveal {
            checkpoints,
            image,
            out,
            level,
            durations,
        } => commands::cmd_nested_reveal(&checkpoints, &image, &out, level, &durations),
        Command::Info {
            duration,
            format,
            size,
        } => {
            if size != 160 && size != 64 {
                return Err(CliError::Usage(format!(
                    "--size must be 160 or 64, got {size}"
                )));
            }
            commands::cmd_info(duration, format, size)
        }
        Command::Eval {
            checkpoints,
            image,
            audio,
            out,
            seed,
        } => commands::cmd_eval(&checkpoints, &image, &audio, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
