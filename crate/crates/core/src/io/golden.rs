//! Golden CSV files for the published shallow- and deep-model tables.

use std::path::Path;

use crate::energy::tables::{
    check_deep, check_shallow, check_transcription, deep_blocks, shallow_rows, DeepBlock, ShallowRow, Violation,
};
use crate::energy::EnergyModel;

use super::report::{read_csv, write_csv};
use super::IoError;

pub const SHALLOW_FILE: &str = "table1.csv";
pub const DEEP_FILE: &str = "table3.csv";

pub fn read_shallow(path: &Path) -> Result<Vec<ShallowRow>, IoError> {
    read_csv(path)
}

pub fn read_deep(path: &Path) -> Result<Vec<DeepBlock>, IoError> {
    read_csv(path)
}

/// Writes both golden files into `dir` from the built-in transcription.
pub fn write_goldens(dir: &Path) -> Result<(), IoError> {
    write_csv(&dir.join(SHALLOW_FILE), &shallow_rows(), true)?;
    write_csv(&dir.join(DEEP_FILE), &deep_blocks(), true)
}

/// Runs every table check over the golden files in `dir`.
pub fn check_golden_dir(dir: &Path, model: &EnergyModel) -> Result<Vec<Violation>, IoError> {
    let shallow = read_shallow(&dir.join(SHALLOW_FILE))?;
    let deep = read_deep(&dir.join(DEEP_FILE))?;
    let mut violations = check_shallow(&shallow, model);
    violations.extend(check_deep(&deep, model));
    violations.extend(check_transcription(&shallow, &deep));
    Ok(violations)
}

/// Directory of the goldens shipped with the crate.
pub fn shipped_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("golden")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_goldens_pass() {
        let v = check_golden_dir(&shipped_dir(), &EnergyModel::default()).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn shipped_goldens_match_transcription() {
        assert_eq!(read_shallow(&shipped_dir().join(SHALLOW_FILE)).unwrap(), shallow_rows());
        assert_eq!(read_deep(&shipped_dir().join(DEEP_FILE)).unwrap(), deep_blocks());
    }

    #[test]
    fn written_goldens_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_goldens(dir.path()).unwrap();
        assert!(check_golden_dir(dir.path(), &EnergyModel::default()).unwrap().is_empty());
    }
}
