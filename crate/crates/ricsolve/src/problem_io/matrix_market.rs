//! Matrix Market reader (coordinate and array formats, real entries).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem_io::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Load a real Matrix Market file. Duplicate coordinates are summed and
/// symmetric storage is expanded to a full matrix.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (header_no, header) = match lines.next() {
        Some((no, line)) => (
            no + 1,
            line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?,
        ),
        None => return Err(parse_err(path, 1, "empty file")),
    };

    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || !fields[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(parse_err(
            path,
            header_no,
            "expected header %%MatrixMarket matrix <format> <field> <symmetry>",
        ));
    }
    if !fields[1].eq_ignore_ascii_case("matrix") {
        return Err(parse_err(path, header_no, "only 'matrix' objects supported"));
    }
    let layout = match fields[2].to_ascii_lowercase().as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => {
            return Err(parse_err(
                path,
                header_no,
                format!("unsupported format '{other}'"),
            ))
        }
    };
    match fields[3].to_ascii_lowercase().as_str() {
        "real" | "integer" => {}
        "complex" => {
            return Err(parse_err(
                path,
                header_no,
                "complex entries are not supported",
            ))
        }
        other => {
            return Err(parse_err(
                path,
                header_no,
                format!("unsupported field type '{other}'"),
            ))
        }
    }
    let symmetry = match fields[4].to_ascii_lowercase().as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => {
            return Err(parse_err(
                path,
                header_no,
                format!("unsupported symmetry '{other}'"),
            ))
        }
    };

    // skip comments / blank lines up to the size line
    let mut size_line: Option<(usize, String)> = None;
    for (no, line) in &mut lines {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some((no + 1, line));
        break;
    }
    let (size_no, size_line) =
        size_line.ok_or_else(|| parse_err(path, header_no + 1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();

    match layout {
        Layout::Coordinate => {
            if dims.len() != 3 {
                return Err(parse_err(path, size_no, "expected 'nrows ncols nnz'"));
            }
            let nrows: usize = dims[0]
                .parse()
                .map_err(|_| parse_err(path, size_no, "bad row count"))?;
            let ncols: usize = dims[1]
                .parse()
                .map_err(|_| parse_err(path, size_no, "bad column count"))?;
            let nnz: usize = dims[2]
                .parse()
                .map_err(|_| parse_err(path, size_no, "bad nnz count"))?;
            if symmetry == Symmetry::Symmetric && nrows != ncols {
                return Err(parse_err(path, size_no, "symmetric matrix must be square"));
            }

            let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz);
            let mut seen = 0usize;
            for (no, line) in &mut lines {
                let line = line.map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('%') {
                    continue;
                }
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(parse_err(path, no + 1, "expected 'i j value'"));
                }
                let i: usize = parts[0]
                    .parse()
                    .map_err(|_| parse_err(path, no + 1, "bad row index"))?;
                let j: usize = parts[1]
                    .parse()
                    .map_err(|_| parse_err(path, no + 1, "bad column index"))?;
                let v: f64 = parts[2]
                    .parse()
                    .map_err(|_| parse_err(path, no + 1, "bad value"))?;
                if i < 1 || i > nrows || j < 1 || j > ncols {
                    return Err(parse_err(
                        path,
                        no + 1,
                        format!("index ({i},{j}) outside {nrows}x{ncols}"),
                    ));
                }
                triplets.push((i - 1, j - 1, v));
                if symmetry == Symmetry::Symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    path,
                    size_no,
                    format!("size line promises {nnz} entries, found {seen}"),
                ));
            }
            let mut m = SparseMatrix::from_triplets(nrows, ncols, &triplets)?;
            m.set_symmetric_hint(symmetry == Symmetry::Symmetric);
            Ok(m)
        }
        Layout::Array => {
            if dims.len() != 2 {
                return Err(parse_err(path, size_no, "expected 'nrows ncols'"));
            }
            let nrows: usize = dims[0]
                .parse()
                .map_err(|_| parse_err(path, size_no, "bad row count"))?;
            let ncols: usize = dims[1]
                .parse()
                .map_err(|_| parse_err(path, size_no, "bad column count"))?;
            if symmetry == Symmetry::Symmetric && nrows != ncols {
                return Err(parse_err(path, size_no, "symmetric matrix must be square"));
            }

            let mut values = Vec::with_capacity(nrows * ncols);
            for (no, line) in &mut lines {
                let line = line.map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('%') {
                    continue;
                }
                for tok in trimmed.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| parse_err(path, no + 1, format!("bad value '{tok}'")))?;
                    values.push(v);
                }
            }
            let expected = match symmetry {
                Symmetry::General => nrows * ncols,
                // lower triangle stored column-major
                Symmetry::Symmetric => nrows * (nrows + 1) / 2,
            };
            if values.len() != expected {
                return Err(parse_err(
                    path,
                    size_no,
                    format!("expected {expected} array values, found {}", values.len()),
                ));
            }
            let mut triplets = Vec::new();
            match symmetry {
                Symmetry::General => {
                    let mut it = values.into_iter();
                    for j in 0..ncols {
                        for i in 0..nrows {
                            let v = it.next().unwrap();
                            if v != 0.0 {
                                triplets.push((i, j, v));
                            }
                        }
                    }
                }
                Symmetry::Symmetric => {
                    let mut it = values.into_iter();
                    for j in 0..ncols {
                        for i in j..nrows {
                            let v = it.next().unwrap();
                            if v != 0.0 {
                                triplets.push((i, j, v));
                                if i != j {
                                    triplets.push((j, i, v));
                                }
                            }
                        }
                    }
                }
            }
            let mut m = SparseMatrix::from_triplets(nrows, ncols, &triplets)?;
            m.set_symmetric_hint(symmetry == Symmetry::Symmetric);
            Ok(m)
        }
    }
}

/// Load a dense matrix from whitespace- or comma-separated text, one row
/// per line. Used for the `B` and `C` factors.
pub fn load_dense_text(path: impl AsRef<Path>) -> Result<nalgebra::DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') || trimmed.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse()
                    .map_err(|_| parse_err(path, no + 1, format!("bad value '{t}'")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    no + 1,
                    format!("row has {} entries, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(nalgebra::DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
