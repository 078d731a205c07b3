//! CSV datasets: a header row, feature columns, and the integer label last.

use std::path::Path;

use crate::data::{Dataset, Matrix};
use crate::error::{BndlError, Result};

fn csv_err(path: &Path, e: csv::Error) -> BndlError {
    BndlError::Ingestion(format!("{}: {e}", path.display()))
}

/// Parses a CSV dataset. `n_classes` defaults to one more than the largest label.
pub fn read_csv_dataset(path: &Path, n_classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let width = rdr.headers().map_err(|e| csv_err(path, e))?.len();
    if width < 2 {
        return Err(BndlError::Ingestion(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let dim = width - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (col, field) in rec.iter().take(dim).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                BndlError::Ingestion(format!(
                    "{}: row {row}, column {col}: `{field}` is not a number",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(BndlError::Ingestion(format!(
                    "{}: non-finite feature at row {row}, column {col}",
                    path.display()
                )));
            }
            values.push(v);
        }
        let field = &rec[dim];
        let y: usize = field.parse().map_err(|_| {
            BndlError::Ingestion(format!(
                "{}: row {row}: label `{field}` is not a non-negative integer",
                path.display()
            ))
        })?;
        labels.push(y);
    }
    let classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    if let Some((row, y)) = labels.iter().enumerate().find(|(_, y)| **y >= classes) {
        return Err(BndlError::Ingestion(format!(
            "{}: row {row}: label {y} is not below n_classes={classes}",
            path.display()
        )));
    }
    let features = Matrix::from_vec(labels.len(), dim, values)?;
    Dataset::new(features, labels, classes)
}

pub fn write_csv_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| BndlError::io(path, e))
}
