//! CSV inputs and JSON/CSV outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::CliError;

/// Rows of a numeric CSV with a header of exactly `width` columns.
/// Errors name the file and the 1-based line.
pub fn read_numeric_csv(path: &Path, width: usize) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() != width {
        return Err(CliError::Input(format!(
            "{} line 1: expected {width} columns, found {}",
            path.display(),
            header.len()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        CliError::Input(format!(
                            "{} line {line}: column '{}' is not a finite number: '{field}'",
                            path.display(),
                            header[j]
                        ))
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, e: &csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::Input(format!("{} line {}: {e}", path.display(), p.line())),
        None => CliError::Input(format!("{}: {e}", path.display())),
    }
}

/// Observations `x1[,x2],y`, split into points and values.
pub fn read_observations(path: &Path, dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let (_, rows) = read_numeric_csv(path, dim + 1)?;
    Ok(rows.into_iter().map(|mut r| {
        let y = r.pop().expect("width checked");
        (r, y)
    }).unzip())
}

/// Draw matrix from a chain CSV written by `sample`.
pub fn read_chain(path: &Path, width: usize) -> Result<DMatrix<f64>, CliError> {
    let (_, rows) = read_numeric_csv(path, width)?;
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
