pub mod lifetime;
pub mod scan;
pub mod spectra;
pub mod sweep;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{write_with, CliError};

/// One line of a `failures.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_with(path, |w| {
        let mut w = csv::Writer::from_writer(w);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(csv::Error::from)
    })
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_reader(crate::open(path)?);
    r.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes `failures.csv` when there is anything to report, and turns a
/// non-empty list into a partial-failure error.
pub fn finish(dir: &Path, failures: &[Failure]) -> Result<(), CliError> {
    let path = dir.join("failures.csv");
    if failures.is_empty() {
        let _ = std::fs::remove_file(&path);
        return Ok(());
    }
    write_rows(&path, failures)?;
    for f in failures {
        eprintln!("failed: {}: {}", f.item, f.error);
    }
    Err(CliError::Partial(failures.len()))
}
