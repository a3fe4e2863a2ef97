//! Matrix file formats.
//!
//! CSV: first line `m,N`, then `m` rows of `N` comma-separated values.
//! Raw: 16-byte header (magic `QLAB`, u32 LE rows, u32 LE cols, u32
//! reserved zero) followed by `m*N` little-endian f64 values, row-major.
//! Raw save-then-load round-trips bit-exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use qlab_core::CalibrationMatrix;

pub const RAW_MAGIC: &[u8; 4] = b"QLAB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FileFormat {
    Csv,
    Raw,
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileFormat::Csv => write!(f, "csv"),
            FileFormat::Raw => write!(f, "raw"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("{path}: non-finite entry at row {row}, column {col}")]
    NonFinite {
        path: String,
        row: usize,
        col: usize,
    },
    #[error("{path}: header promises {expected} data rows, found {found}")]
    DimensionHeaderMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(path: &Path, detail: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn load_matrix(path: &Path, format: FileFormat) -> Result<CalibrationMatrix, IoError> {
    let data = match format {
        FileFormat::Csv => load_csv(path)?,
        FileFormat::Raw => load_raw(path)?,
    };
    for col in 0..data.ncols() {
        for row in 0..data.nrows() {
            if !data[(row, col)].is_finite() {
                return Err(IoError::NonFinite {
                    path: path.display().to_string(),
                    row,
                    col,
                });
            }
        }
    }
    CalibrationMatrix::new(data).map_err(|e| parse_err(path, e.to_string()))
}

pub fn save_matrix(
    path: &Path,
    format: FileFormat,
    matrix: &CalibrationMatrix,
) -> Result<(), IoError> {
    let io_err = |source| IoError::Io {
        path: path.display().to_string(),
        source,
    };
    let m = matrix.matrix();
    match format {
        FileFormat::Csv => {
            let mut out = format!("{},{}\n", m.nrows(), m.ncols());
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|j| format!("{:?}", m[(i, j)])) // {:?} keeps full f64 precision
                    .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            fs::write(path, out).map_err(io_err)
        }
        FileFormat::Raw => {
            let mut bytes = Vec::with_capacity(16 + 8 * m.nrows() * m.ncols());
            bytes.extend_from_slice(RAW_MAGIC);
            bytes.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            bytes.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            bytes.extend_from_slice(&0u32.to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
            fs::write(path, bytes).map_err(io_err)
        }
    }
}

fn load_csv(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    if dims.len() != 2 {
        return Err(parse_err(path, format!("header must be `rows,cols`, got `{header}`")));
    }
    let rows: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(path, format!("bad row count `{}`", dims[0])))?;
    let cols: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(path, format!("bad column count `{}`", dims[1])))?;

    let mut entries = Vec::with_capacity(rows * cols);
    let mut found = 0usize;
    for (k, line) in lines.enumerate() {
        found += 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(parse_err(
                path,
                format!("data row {} has {} fields, expected {cols}", k + 1, fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, format!("bad value `{f}` in data row {}", k + 1)))?;
            entries.push(v);
        }
    }
    if found != rows {
        return Err(IoError::DimensionHeaderMismatch {
            path: path.display().to_string(),
            expected: rows,
            found,
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

fn load_raw(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 16 {
        return Err(parse_err(path, "file shorter than the 16-byte header"));
    }
    if &bytes[0..4] != RAW_MAGIC {
        return Err(parse_err(path, "bad magic, expected `QLAB`"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let rows = word(4) as usize;
    let cols = word(8) as usize;
    if word(12) != 0 {
        return Err(parse_err(path, "reserved header word must be zero"));
    }
    let expected = 16 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("expected {expected} bytes for {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    let entries: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}
