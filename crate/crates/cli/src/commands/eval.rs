use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sutura::dataio::{AccessLog, ManifestEntry};
use sutura::eval::{fold_counts_at, CurvePoint, DEFAULT_MATCH_RADIUS};
use sutura::train::{load_samples, predict_heatmap, Checkpoint, Sample};
use sutura::unet::UNetModel;
use sutura::{Heatmap, LandmarkSet};

use super::{load_manifest, train::write_curve_file, CliError};
use crate::range::parse_threshold_range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Only surgeries recorded as validation in the checkpoint.
    Validation,
    /// Every manifest entry.
    All,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "F")]
    pub checkpoint: PathBuf,

    /// Dataset manifest JSON.
    #[arg(long, value_name = "F")]
    pub manifest: PathBuf,

    /// Which manifest entries to evaluate.
    #[arg(long, value_enum, default_value_t = Split::Validation)]
    pub split: Split,

    /// Decode thresholds as an inclusive start:end:step range.
    #[arg(long, value_name = "START:END:STEP", default_value = "0.05:1.0:0.05")]
    pub thresholds: String,

    /// Output CSV path.
    #[arg(long, value_name = "F")]
    pub csv: PathBuf,
}

/// Forward passes for every sample, fanned out over `threads` and stitched
/// back in sample order so the output never depends on scheduling.
pub fn predict_all(
    model: &UNetModel,
    samples: &[Sample],
    threads: usize,
) -> Result<Vec<(Heatmap, LandmarkSet)>, CliError> {
    let predict = |s: &Sample| -> Result<(Heatmap, LandmarkSet), CliError> {
        let map = predict_heatmap(model, &s.image)?;
        Ok((map, s.landmarks.clone()))
    };
    if threads <= 1 || samples.len() <= 1 {
        return samples.iter().map(predict).collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let results: Vec<Result<Vec<(Heatmap, LandmarkSet)>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(predict).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for chunk in results {
        out.extend(chunk?);
    }
    Ok(out)
}

pub fn run(args: &EvalArgs, threads: usize) -> Result<(), CliError> {
    let thresholds = parse_threshold_range(&args.thresholds).map_err(CliError::Usage)?;

    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.restore_model()?;
    let manifest = load_manifest(&args.manifest)?;

    let entries: Vec<&ManifestEntry> = match args.split {
        Split::All => manifest.entries.iter().collect(),
        Split::Validation => {
            let keep = &checkpoint.meta.validation_surgeries;
            manifest
                .entries
                .iter()
                .filter(|e| keep.contains(&e.surgery_id))
                .collect()
        }
    };
    if entries.is_empty() {
        return Err(CliError::Runtime(format!(
            "no frames selected: the checkpoint's validation surgeries {:?} \
             do not appear in the manifest (try --split all)",
            checkpoint.meta.validation_surgeries
        )));
    }

    let log = AccessLog::new();
    let samples = load_samples(
        &manifest,
        &entries,
        checkpoint.meta.unet.input_width,
        checkpoint.meta.unet.input_height,
        &log,
    )?;
    let frames = predict_all(&model, &samples, threads)?;

    // A single evaluated split is one "fold": mean, min, and max coincide.
    let points: Vec<CurvePoint> = thresholds
        .iter()
        .map(|&t| {
            let counts = fold_counts_at(&frames, t, DEFAULT_MATCH_RADIUS);
            CurvePoint {
                threshold: t,
                ppv_mean: counts.ppv(),
                ppv_min: counts.ppv(),
                ppv_max: counts.ppv(),
                tpr_mean: counts.tpr(),
                tpr_min: counts.tpr(),
                tpr_max: counts.tpr(),
            }
        })
        .collect();
    write_curve_file(&args.csv, &points)?;
    println!("{}", args.csv.display());
    Ok(())
}
