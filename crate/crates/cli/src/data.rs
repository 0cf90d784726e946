use std::path::Path;

use leafprox::{Error, Result};
use ndarray::Array2;

/// A header-first CSV table split into features and an optional label column.
#[derive(Debug)]
pub struct Table {
    pub x: Array2<f64>,
    pub y: Option<Vec<f64>>,
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_cell(path: &Path, line: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("column `{column}`: `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("column `{column}`: non-finite value `{raw}`"),
        ));
    }
    Ok(v)
}

/// Read a comma-separated file whose first row names the columns. When
/// `label` is given, that column becomes `y` and must exist.
pub fn read_csv(path: &Path, label: Option<&str>) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_error(path, 1, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = match label {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "label column `{name}` not found in {} (columns: {})",
                path.display(),
                header.join(", ")
            ))
        })?),
        None => None,
    };
    let n_features = header.len() - usize::from(label_col.is_some());
    if n_features == 0 {
        return Err(Error::EmptyInput("feature columns"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n_rows = 0;
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_error(path, line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (c, raw) in record.iter().enumerate() {
            let v = parse_cell(path, line, &header[c], raw)?;
            if Some(c) == label_col {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::EmptyInput("CSV rows"));
    }
    let x = Array2::from_shape_vec((n_rows, n_features), values)
        .expect("row lengths checked above");
    Ok(Table {
        x,
        y: label_col.map(|_| labels),
    })
}
