//! CSV and JSON report files.
//!
//! Unless `deterministic` is set, CSV reports start with a `#` comment line
//! carrying the generation time; readers skip comment lines.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{file_err, IoError};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], deterministic: bool) -> Result<(), IoError> {
    let mut buf = Vec::new();
    if !deterministic {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        buf.extend_from_slice(format!("# generated at unix time {secs}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| file_err(path, e))?;
    }
    fs::write(path, buf).map_err(|e| file_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(err) => file_err(path, err),
            other => IoError::Schema(format!("{other:?}")),
        })?;
    r.deserialize().map(|row| row.map_err(IoError::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| file_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        width: u32,
        mse: f64,
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![Row { width: 11, mse: 0.5 }, Row { width: 16, mse: 0.25 }];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_csv(&a, &rows, true).unwrap();
        write_csv(&b, &rows, true).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_csv::<Row>(&a).unwrap(), rows);
        write_csv(&b, &rows, false).unwrap();
        assert!(fs::read_to_string(&b).unwrap().starts_with('#'));
        assert_eq!(read_csv::<Row>(&b).unwrap(), rows);
    }
}
