//! CSV ingestion and export for real datasets.
//!
//! Files carry a header row with channel names; each subsequent row is one
//! timestep. Row numbers in errors are 1-based data rows (the header is row 0).

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::series::{SeriesError, TimeSeries};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: cannot parse {cell:?} as a number")]
    NonNumeric {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("row {row}, column {column}: non-finite value {cell:?}")]
    NonFinite {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("header lacks column {0}")]
    MissingColumn(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

/// Reads the columns named in `schema` (in that order). An empty schema
/// selects every column in header order.
pub fn load_csv(path: &Path, schema: &[String]) -> Result<TimeSeries, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CsvError::Malformed {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let names: Vec<String> = if schema.is_empty() {
        header.clone()
    } else {
        schema.to_vec()
    };
    let indices = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CsvError::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CsvError::Malformed {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(CsvError::Ragged {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let values = indices
            .iter()
            .map(|&c| {
                let cell = &record[c];
                let value: f64 = cell.parse().map_err(|_| CsvError::NonNumeric {
                    row,
                    column: header[c].clone(),
                    cell: cell.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(CsvError::NonFinite {
                        row,
                        column: header[c].clone(),
                        cell: cell.to_string(),
                    });
                }
                Ok(value)
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    Ok(TimeSeries::new(rows, names)?)
}

/// Writes `series` with shortest round-trip decimal formatting.
pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<(), CsvError> {
    let mut out = String::new();
    out.push_str(&series.channel_names().join(","));
    out.push('\n');
    for row in series.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut file = File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
