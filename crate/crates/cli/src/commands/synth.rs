use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sutura::synth::{generate_dataset, ColorMode, PhantomConfig, SynthError};

use super::CliError;
use crate::range::parse_span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    Green,
    White,
    Mixed,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory for frames, annotations, and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Number of simulated surgeries (one visual style each).
    #[arg(long, value_name = "N")]
    pub surgeries: usize,

    /// Frames per surgery.
    #[arg(long, value_name = "M")]
    pub frames: usize,

    /// Base seed; the same seed regenerates byte-identical files.
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,

    /// Suture count range per frame, inclusive.
    #[arg(long, value_name = "LO:HI")]
    pub sutures: Option<String>,

    /// Frame width in pixels.
    #[arg(long, default_value_t = 512)]
    pub width: usize,

    /// Frame height in pixels.
    #[arg(long, default_value_t = 288)]
    pub height: usize,

    /// Suture dot coloring.
    #[arg(long, value_enum, default_value_t = ColorArg::Green)]
    pub color: ColorArg,
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    if args.surgeries == 0 || args.frames == 0 {
        return Err(CliError::Usage(
            "--surgeries and --frames must both be at least 1".into(),
        ));
    }
    let mut config = PhantomConfig {
        width: args.width,
        height: args.height,
        seed: args.seed,
        color_mode: match args.color {
            ColorArg::Green => ColorMode::Green,
            ColorArg::White => ColorMode::White,
            ColorArg::Mixed => ColorMode::Mixed,
        },
        ..PhantomConfig::default()
    };
    if let Some(span) = &args.sutures {
        let (lo, hi) = parse_span(span).map_err(CliError::Usage)?;
        config.sutures_min = lo;
        config.sutures_max = hi;
    }
    // Flag values that violate the generator's own constraints are usage
    // errors; failures past this point are runtime.
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    generate_dataset(&config, &args.out, args.surgeries, args.frames)
        .map_err(|e| match e {
            SynthError::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        })?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}
