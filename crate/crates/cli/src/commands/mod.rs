//! One module per subcommand plus the shared error split.

pub mod curves;
pub mod decode;
pub mod eval;
pub mod synth;
pub mod train;

use std::fmt::Display;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use sutura::dataio::{DataError, DatasetManifest};
use sutura::train::TrainError;

/// The two failure classes the exit-code contract distinguishes: `Usage`
/// exits 1 (the command line itself was wrong), `Runtime` exits 2
/// (flags were fine, the work failed).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn runtime(context: impl Display, e: impl Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

pub fn open_file(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| runtime(path.display(), e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(|e| CliError::Runtime(e.to_string()))
}
