//! CSV ingestion and emission (header row mandatory, '.' decimal).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{MqgmError, Result};
use crate::features::Dataset;

/// Reads a numeric CSV. Columns named in `exogenous` go to `X`; all others to `Y`.
pub fn read_dataset(path: &Path, exogenous: &[String]) -> Result<Dataset> {
    let file = File::open(path)?;
    read_dataset_from(file, exogenous)
}

pub fn read_dataset_from<R: std::io::Read>(reader: R, exogenous: &[String]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for name in exogenous {
        if !headers.contains(name) {
            return Err(MqgmError::InvalidArgument(format!(
                "exogenous column '{name}' not found in header"
            )));
        }
    }
    let y_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| !exogenous.contains(&headers[c]))
        .collect();
    let x_cols: Vec<usize> = exogenous
        .iter()
        .map(|name| headers.iter().position(|h| h == name).unwrap())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(MqgmError::DimensionMismatch(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(MqgmError::InvalidArgument(format!(
                    "missing value at row {}, column '{}'",
                    i + 1,
                    headers[c]
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                MqgmError::InvalidArgument(format!(
                    "non-numeric value '{field}' at row {}, column '{}'",
                    i + 1,
                    headers[c]
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    let y = Array2::from_shape_fn((n, y_cols.len()), |(i, j)| rows[i][y_cols[j]]);
    let x = if x_cols.is_empty() {
        None
    } else {
        Some(Array2::from_shape_fn((n, x_cols.len()), |(i, j)| rows[i][x_cols[j]]))
    };
    let names = y_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::with_exogenous(y, x, names, exogenous.to_vec())
}

/// Writes a matrix with a header row.
pub fn write_matrix<W: Write>(writer: W, header: &[String], values: ArrayView2<f64>) -> Result<()> {
    if header.len() != values.ncols() {
        return Err(MqgmError::DimensionMismatch(format!(
            "{} header names for {} columns",
            header.len(),
            values.ncols()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header)?;
    for row in values.rows() {
        wtr.write_record(row.iter().map(|v| format_f64(*v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, header: &[String], values: ArrayView2<f64>) -> Result<()> {
    write_matrix(File::create(path)?, header, values)
}

/// Writes the dataset (Y columns, then X columns).
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut header = data.names().to_vec();
    header.extend(data.exogenous_names().iter().cloned());
    let values = match data.x() {
        Some(x) => ndarray::concatenate![ndarray::Axis(1), data.y(), x],
        None => data.y().to_owned(),
    };
    write_matrix_file(path, &header, values.view())
}

/// Shortest round-tripping decimal representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
