use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use sutura::eval::{aggregate_folds, write_curves_csv, CurvePoint};
use sutura::train::{run_cv, TrainConfig};

use super::{load_manifest, runtime, CliError};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest JSON.
    #[arg(long, value_name = "F")]
    pub manifest: PathBuf,

    /// Number of cross-validation folds.
    #[arg(long, value_name = "K")]
    pub folds: usize,

    /// Training config JSON; omitted fields take their defaults.
    #[arg(long, value_name = "F")]
    pub config: PathBuf,

    /// Output directory for checkpoints, records, curves, and the summary.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn write_curve_file(path: &Path, points: &[CurvePoint]) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_curves_csv(points, &mut bytes).map_err(|e| runtime(path.display(), e))?;
    fs::write(path, bytes).map_err(|e| runtime(path.display(), e))
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let config_text =
        fs::read_to_string(&args.config).map_err(|e| runtime(args.config.display(), e))?;
    let config: TrainConfig =
        serde_json::from_str(&config_text).map_err(|e| runtime(args.config.display(), e))?;
    let manifest = load_manifest(&args.manifest)?;

    // Fold count vs. surgery count is checked up front as a usage error:
    // more folds than surgeries cannot split on the surgery level.
    let surgery_count = manifest.surgeries().len();
    if args.folds < 2 || args.folds > surgery_count {
        return Err(CliError::Usage(format!(
            "--folds {} is outside 2..={surgery_count} (the manifest has \
             {surgery_count} surgeries; folds must split whole surgeries)",
            args.folds
        )));
    }

    let result = run_cv(&manifest, args.folds, &config)?;

    fs::create_dir_all(&args.out).map_err(|e| runtime(args.out.display(), e))?;
    let mut summary = String::new();
    for outcome in &result.folds {
        let i = outcome.record.fold_id;
        outcome.checkpoint.save(&args.out.join(format!("fold_{i}.ckpt")))?;

        let record_path = args.out.join(format!("fold_{i}_record.csv"));
        let mut bytes = Vec::new();
        outcome
            .record
            .write_csv(&mut bytes)
            .map_err(|e| runtime(record_path.display(), e))?;
        fs::write(&record_path, bytes).map_err(|e| runtime(record_path.display(), e))?;

        let fold_curve = aggregate_folds(std::slice::from_ref(&outcome.curve_counts))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_curve_file(&args.out.join(format!("fold_{i}_curve.csv")), &fold_curve)?;

        writeln!(
            summary,
            "fold {i}: validation {:?}, best epoch {}, validation loss {}",
            outcome.fold.validation_surgeries,
            outcome.checkpoint.meta.epoch,
            outcome.checkpoint.meta.validation_loss
        )
        .expect("string formatting");
    }

    write_curve_file(&args.out.join("curve.csv"), &result.curve)?;

    let summary_path = args.out.join("summary.txt");
    fs::write(&summary_path, summary.as_bytes())
        .map_err(|e| runtime(summary_path.display(), e))?;

    print!("{summary}");
    println!("{}", summary_path.display());
    Ok(())
}
