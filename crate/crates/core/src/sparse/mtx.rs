//! Matrix Market coordinate I/O (`%%MatrixMarket matrix coordinate real general`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::SparseMatrix;
use crate::error::{Error, Result};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Write `m` with 1-based indices. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_matrix_market_to<W: Write>(m: &SparseMatrix, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{HEADER}")?;
    writeln!(out, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
    for (r, c, v) in m.iter() {
        writeln!(out, "{} {} {:?}", r + 1, c + 1, v)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_matrix_market(m: &SparseMatrix, path: &Path) -> Result<()> {
    write_matrix_market_to(m, File::create(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

/// Read a coordinate-format file. `general` and `symmetric` layouts are
/// accepted; repeated coordinates are summed.
pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fail(1, "empty file".into()))?;
    let header = header?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() != 5
        || tokens[0] != "%%matrixmarket"
        || tokens[1] != "matrix"
        || tokens[2] != "coordinate"
    {
        return Err(fail(1, format!("unsupported header `{header}`")));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(fail(1, format!("unsupported field `{other}`"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(fail(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut read = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_index = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| fail(lineno, format!("bad {what} `{s}`: {e}")))
        };
        match dims {
            None => {
                if parts.len() != 3 {
                    return Err(fail(lineno, "expected `rows cols nnz`".into()));
                }
                let d = (
                    parse_index(parts[0], "row count")?,
                    parse_index(parts[1], "column count")?,
                    parse_index(parts[2], "entry count")?,
                );
                entries.reserve(d.2);
                dims = Some(d);
            }
            Some((n_rows, n_cols, _)) => {
                let expected = if field == Field::Pattern { 2 } else { 3 };
                if parts.len() != expected {
                    return Err(fail(lineno, format!("expected {expected} fields")));
                }
                let r = parse_index(parts[0], "row index")?;
                let c = parse_index(parts[1], "column index")?;
                if r == 0 || r > n_rows || c == 0 || c > n_cols {
                    return Err(fail(lineno, format!("index ({r}, {c}) out of range")));
                }
                let v = match field {
                    Field::Pattern => 1.0,
                    _ => parts[2]
                        .parse::<f64>()
                        .map_err(|e| fail(lineno, format!("bad value `{}`: {e}", parts[2])))?,
                };
                if !v.is_finite() {
                    return Err(fail(lineno, "non-finite value".into()));
                }
                read += 1;
                entries.push((r - 1, c - 1, v));
                if symmetric && r != c {
                    entries.push((c - 1, r - 1, v));
                }
            }
        }
    }
    let (n_rows, n_cols, nnz) = dims.ok_or_else(|| fail(1, "missing size line".into()))?;
    if read != nnz {
        return Err(fail(
            0,
            format!("size line declares {nnz} entries but {read} were read"),
        ));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, &entries)
}
