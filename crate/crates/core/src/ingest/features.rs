use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// On-disk encodings for dense matrices.
///
/// `Text`: first line `M D`, then `M` lines of `D` whitespace-separated
/// decimals. `RawF32`: two little-endian `u64` (M, D) followed by `M*D`
/// little-endian `f32`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Text,
    RawF32,
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "text-matrix" => Ok(Self::Text),
            "raw-f32" | "raw" => Ok(Self::RawF32),
            other => Err(Error::InvalidArgument(format!("unknown matrix format `{other}`"))),
        }
    }
}

const HEADER_BYTES: usize = 16;

/// Loads an item feature matrix, optionally checking its row count.
pub fn load_features(
    path: &Path,
    format: FeatureFormat,
    expected_rows: Option<usize>,
) -> Result<Array2<f64>> {
    let matrix = match format {
        FeatureFormat::Text => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_text_matrix(&text)?
        }
        FeatureFormat::RawF32 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_raw_f32(&bytes)?
        }
    };
    if let Some(m) = expected_rows {
        if matrix.nrows() != m {
            return Err(Error::Shape(format!(
                "{} has {} rows, expected {m}",
                path.display(),
                matrix.nrows()
            )));
        }
    }
    Ok(matrix)
}

pub(crate) fn parse_text_matrix(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| Error::Empty("matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: hline + 1,
            message: "header must be `M D`".into(),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse {
            line: hline + 1,
            message: "header must be `M D`".into(),
        });
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (idx, line) in lines {
        if seen_rows == rows {
            return Err(Error::Shape(format!("more than {rows} data rows (line {})", idx + 1)));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("`{tok}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "feature matrix".into(),
                    row: seen_rows,
                });
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Shape(format!(
                "line {} has {} values, expected {cols}",
                idx + 1,
                data.len() - before
            )));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::Shape(format!("expected {rows} rows, found {seen_rows}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}

pub(crate) fn decode_raw_f32(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Shape("raw-f32 file shorter than its 16-byte header".into()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::Shape("raw-f32 header overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "raw-f32 {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes[HEADER_BYTES..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "raw-f32 matrix".into(),
                row: k / cols.max(1),
            });
        }
        data.push(v as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}

pub(crate) fn encode_raw_f32(matrix: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + matrix.len() * 4);
    out.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.ncols() as u64).to_le_bytes());
    for v in matrix.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_raw_f32(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode_raw_f32(matrix)).map_err(|e| Error::io(path, e))
}

/// Writes the text format with shortest round-trip decimals.
pub fn write_text_matrix(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = format!("{} {}\n", matrix.nrows(), matrix.ncols());
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
