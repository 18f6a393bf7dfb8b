//! CSV ingestion: comma separated, header row, UTF-8, `.` decimals.

use std::collections::HashMap;
use std::path::Path;

use affinity_core::MatchedSample;
use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Row accounting of one ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_used: usize,
    pub ignored_columns: Vec<String>,
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Reads the mapped columns of `path`. Rows with an empty, `NA` or `NaN`
/// mapped cell are dropped and counted.
pub fn ingest_csv(path: &Path, x_cols: &[String], y_cols: &[String]) -> Result<(MatchedSample, DropReport)> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let locate = |cols: &[String]| -> Result<Vec<usize>> {
        cols.iter()
            .map(|c| position.get(c.as_str()).copied().ok_or_else(|| CliError::MissingColumn(c.clone())))
            .collect()
    };
    let xi = locate(x_cols)?;
    let yi = locate(y_cols)?;
    let ignored: Vec<String> = header
        .iter()
        .filter(|h| !x_cols.contains(h) && !y_cols.contains(h))
        .cloned()
        .collect();
    if !ignored.is_empty() {
        info!("ignoring unmapped columns: {}", ignored.join(", "));
    }

    let (dx, dy) = (xi.len(), yi.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut read = 0;
    let mut dropped = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        read += 1;
        let mut row = Vec::with_capacity(dx + dy);
        let mut complete = true;
        for (&c, name) in xi.iter().chain(&yi).zip(x_cols.iter().chain(y_cols)) {
            let cell = record.get(c).unwrap_or("");
            if is_missing(cell) {
                complete = false;
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(CliError::NonNumericCell {
                        row: r + 1,
                        col: name.clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        if complete {
            xs.extend_from_slice(&row[..dx]);
            ys.extend_from_slice(&row[dx..]);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        info!("dropped {dropped} of {read} rows with missing values");
    }
    let n = read - dropped;
    if n == 0 {
        return Err(CliError::EmptyAfterFiltering { dropped });
    }
    let x = Array2::from_shape_vec((n, dx), xs).expect("row lengths checked");
    let y = Array2::from_shape_vec((n, dy), ys).expect("row lengths checked");
    let sample = MatchedSample::new(x, y, Some(x_cols.to_vec()), Some(y_cols.to_vec()))?;
    Ok((
        sample,
        DropReport {
            rows_read: read,
            rows_dropped: dropped,
            rows_used: n,
            ignored_columns: ignored,
        },
    ))
}

/// Writes a sample with its attribute names as header. `f64` display is the
/// shortest representation that parses back to the same value.
pub fn write_csv(path: &Path, sample: &MatchedSample) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        w.write_record(sample.attribute_names_x.iter().chain(&sample.attribute_names_y))
            .map_err(csv_err)?;
        for (xr, yr) in sample.x.rows().into_iter().zip(sample.y.rows()) {
            w.write_record(xr.iter().chain(yr.iter()).map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    crate::emit::write_atomic(path, &buf)
}
