//! Numeric CSV matrices, one sample per row, `.` as decimal separator.

use std::path::Path;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.into(),
        message: message.into(),
    }
}

/// Reads a rectangular numeric CSV. A first row that does not parse as
/// numbers is treated as a header and skipped.
pub fn load_csv_matrix<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(path, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(data_err(path, format!("line {}: {e}", line + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(data_err(path, format!("row {} has {} fields, expected {cols}", i + 1, r.len())));
    }
    let n = rows.len();
    let data: Vec<T> = rows.into_iter().flatten().map(T::lit).collect();
    Ok(Array2::from_shape_vec((n, cols), data).expect("rectangular rows"))
}

/// CSV dataset whose `label_column` holds integer class ids; the other
/// columns are features.
pub fn load_csv_dataset<T: Scalar>(path: &Path, label_column: usize, d: usize) -> Result<Dataset<T>> {
    let m = load_csv_matrix::<f64>(path)?;
    if label_column >= m.ncols() {
        return Err(data_err(path, format!("label column {label_column} out of range for {} columns", m.ncols())));
    }
    let mut labels = Vec::with_capacity(m.nrows());
    let mut features = Vec::with_capacity(m.nrows() * (m.ncols() - 1));
    for (i, row) in m.rows().into_iter().enumerate() {
        let l = row[label_column];
        if l < 0.0 || l.fract() != 0.0 {
            return Err(data_err(path, format!("row {}: label {l} is not a nonnegative integer", i + 1)));
        }
        labels.push(l as usize);
        features.extend(row.iter().enumerate().filter(|&(j, _)| j != label_column).map(|(_, &v)| T::lit(v)));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let samples = Tensor::new(vec![m.nrows(), m.ncols() - 1], features)?;
    Dataset::new(samples, labels, k, d)
}

/// Writes features followed by a trailing `label` column, with a header.
pub fn write_csv_dataset<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let dims = dataset.samples.sample_len();
    let mut header: Vec<String> = (0..dims).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| data_err(path, e.to_string()))?;
    for (i, &label) in dataset.labels.iter().enumerate() {
        let mut row: Vec<String> = dataset.samples.sample(i).iter().map(|v| format!("{:e}", v.as_f64())).collect();
        row.push(label.to_string());
        w.write_record(&row).map_err(|e| data_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
