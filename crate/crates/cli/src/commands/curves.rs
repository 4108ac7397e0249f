use std::path::PathBuf;

use clap::Args;
use sutura::eval::{merge_fold_curves, read_curves_csv, CurvePoint};

use super::{open_file, train::write_curve_file, CliError};

#[derive(Args)]
pub struct CurvesArgs {
    /// Per-fold curve CSVs, as written by `train` or `eval`.
    #[arg(required = true, value_name = "CSV")]
    pub inputs: Vec<PathBuf>,

    /// Merged cross-fold curve CSV.
    #[arg(long, value_name = "F")]
    pub out: PathBuf,
}

pub fn run(args: &CurvesArgs) -> Result<(), CliError> {
    let mut folds: Vec<Vec<CurvePoint>> = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let reader = open_file(path)?;
        let points = read_curves_csv(reader)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        folds.push(points);
    }
    let merged = merge_fold_curves(&folds).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_curve_file(&args.out, &merged)?;
    println!("{}", args.out.display());
    Ok(())
}
