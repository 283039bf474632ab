//! CSV matrices and JSON reports.
//!
//! Matrices are headerless CSV, one row per line. Floats are written with
//! Rust's shortest round-trip formatting, so write-then-read is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{GvarError, Result};

pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| GvarError::Parse(format!("row {}: cannot parse {field:?} as a number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(GvarError::Parse("empty matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix_file<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file<P: AsRef<Path>>(m: &DMatrix<f64>, path: P) -> Result<()> {
    write_matrix(m, BufWriter::new(File::create(path)?))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn read_json_file<T: DeserializeOwned, P: AsRef<Path>>(path: P) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
