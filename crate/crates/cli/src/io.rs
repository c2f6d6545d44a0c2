//! CSV tables with a header row, and JSON files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{at_path, CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(at_path(path))?;
    let header: Vec<String> = reader.headers().map_err(at_path(path))?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Validation(format!("{}: missing header row", path.display())));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(at_path(path))?;
        if record.len() != header.len() {
            return Err(CliError::Validation(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                record.len(),
                header.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                return Err(CliError::Validation(format!(
                    "{}: missing value in row {}, column {} (missing data is not supported)",
                    path.display(),
                    i + 1,
                    header[j]
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::Validation(format!("{}: row {}, column {}: '{field}' is not a number", path.display(), i + 1, header[j]))
            })?;
            rows.push(v);
        }
        n += 1;
    }
    Ok(Table { values: DMatrix::from_row_slice(n, header.len(), &rows), header })
}

pub fn write_table(path: &Path, header: &[String], values: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(at_path(path))?;
    w.write_record(header).map_err(at_path(path))?;
    for row in values.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(at_path(path))?;
    }
    w.flush().map_err(at_path(path))
}

/// Rows of already-formatted fields.
pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(at_path(path))?;
    w.write_record(header).map_err(at_path(path))?;
    for r in rows {
        w.write_record(r).map_err(at_path(path))?;
    }
    w.flush().map_err(at_path(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text + "\n").map_err(at_path(&tmp))?;
    fs::rename(&tmp, path).map_err(at_path(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(at_path(path))?;
    serde_json::from_str(&text).map_err(at_path(path))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(at_path(path))
}
