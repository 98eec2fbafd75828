//! Token-pool ingestion from embedding files and sequence sampling.
//!
//! Two formats are accepted:
//! - `csv`: one token per line, `D` comma-separated decimals; lines starting
//!   with `#` and blank lines are skipped.
//! - `rawf32`: little-endian `f32`, row-major, no header.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array3, Axis as NdAxis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{RngSeed, TokenBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Csv,
    Rawf32,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EmbeddingFormat::Csv),
            "rawf32" | "f32" | "raw" => Ok(EmbeddingFormat::Rawf32),
            _ => invalid(format!("unknown embedding format '{s}'")),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingFormat::Csv => "csv",
            EmbeddingFormat::Rawf32 => "rawf32",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub path: PathBuf,
    pub format: EmbeddingFormat,
    pub dim: usize,
    pub limit: Option<usize>,
}

impl EmbeddingFile {
    pub fn new(path: impl AsRef<Path>, format: EmbeddingFormat, dim: usize) -> Self {
        EmbeddingFile {
            path: path.as_ref().to_path_buf(),
            format,
            dim,
            limit: None,
        }
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }
}

/// Parses CSV token rows.
pub fn parse_csv(text: &str, dim: usize, limit: Option<usize>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut tokens = 0;
    for (i, line) in text.lines().enumerate() {
        if limit.is_some_and(|lim| tokens >= lim) {
            break;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let start = out.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad number '{}': {e}", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("non-finite value {v}"),
                });
            }
            out.push(v);
        }
        let got = out.len() - start;
        if got != dim {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {dim} fields, found {got}"),
            });
        }
        tokens += 1;
    }
    Ok(out)
}

/// Decodes little-endian `f32` rows, widening to `f64`.
pub fn parse_rawf32(bytes: &[u8], dim: usize, limit: Option<usize>) -> Result<Vec<f64>> {
    let row = 4 * dim;
    if !bytes.len().is_multiple_of(row) {
        return invalid(format!(
            "rawf32 length {} is not a multiple of 4 * D = {row}",
            bytes.len()
        ));
    }
    let mut n = bytes.len() / row;
    if let Some(lim) = limit {
        n = n.min(lim);
    }
    let mut out = Vec::with_capacity(n * dim);
    for (i, chunk) in bytes[..n * row].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
        if !v.is_finite() {
            return invalid(format!("non-finite value at token {}", i / dim));
        }
        out.push(v);
    }
    Ok(out)
}

/// Loads the whole file as a single pool, shape `(1, tokens, D)`.
pub fn ingest(file: &EmbeddingFile) -> Result<TokenBatch> {
    if file.dim == 0 {
        return invalid("embedding dimension must be positive");
    }
    let values = match file.format {
        EmbeddingFormat::Csv => parse_csv(&fs::read_to_string(&file.path)?, file.dim, file.limit)?,
        EmbeddingFormat::Rawf32 => parse_rawf32(&fs::read(&file.path)?, file.dim, file.limit)?,
    };
    let tokens = values.len() / file.dim;
    if tokens == 0 {
        return invalid(format!("{} contains no tokens", file.path.display()));
    }
    TokenBatch::from_vec(1, tokens, file.dim, values)
}

/// Draws `n` sequences of `l` distinct tokens from `pool`.
pub fn sample_sequences(pool: &TokenBatch, n: usize, l: usize, seed: RngSeed) -> Result<TokenBatch> {
    let size = pool.batch() * pool.seq_len();
    if n == 0 || l == 0 {
        return invalid("need at least one sequence of at least one token");
    }
    if l > size {
        return invalid(format!("cannot draw {l} distinct tokens from a pool of {size}"));
    }
    let d = pool.dim();
    let flat = pool
        .data()
        .view()
        .into_shape_with_order((size, d))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Array3::zeros((n, l, d));
    for (b, mut seq) in out.axis_iter_mut(NdAxis(0)).enumerate() {
        let mut rng = seed.stream(b as u64);
        for (slot, src) in index::sample(&mut rng, size, l).into_iter().enumerate() {
            seq.row_mut(slot).assign(&flat.row(src));
        }
    }
    Ok(TokenBatch::from_array_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_pool() {
        let text = "# header\n1,2\n\n3.5, -4\n5e-1,6\n";
        let v = parse_csv(text, 2, None).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.5, -4.0, 0.5, 6.0]);
        assert_eq!(parse_csv(text, 2, Some(2)).unwrap().len(), 4);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_csv("1,2\n3,x\n", 2, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_csv("1,2\n# c\n3,4,5\n", 2, None) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected 2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rawf32_pool() {
        let vals: [f32; 6] = [1.0, -2.0, 0.5, 3.25, 7.0, 8.0];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(bytes.len(), 24);
        let v = parse_rawf32(&bytes, 2, None).unwrap();
        assert_eq!(v.len() / 2, 3);
        assert_eq!(v[3], 3.25);
        assert!(parse_rawf32(&bytes[..20], 2, None).is_err());
    }

    #[test]
    fn ingest_files() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2\n3,4\n5,6").unwrap();
        let pool = ingest(&EmbeddingFile::new(f.path(), EmbeddingFormat::Csv, 2)).unwrap();
        assert_eq!(pool.shape(), (1, 3, 2));
        assert!(ingest(&EmbeddingFile::new(f.path(), EmbeddingFormat::Csv, 3)).is_err());
        assert!(ingest(&EmbeddingFile::new("/nonexistent/file.csv", EmbeddingFormat::Csv, 2)).is_err());
    }

    #[test]
    fn sampling_draws_distinct_tokens() {
        let values: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let pool = TokenBatch::from_vec(1, 50, 1, values).unwrap();
        let s = sample_sequences(&pool, 4, 50, RngSeed(3)).unwrap();
        for b in 0..4 {
            let mut seen: Vec<f64> = s.data().slice(ndarray::s![b, .., 0]).to_vec();
            seen.sort_by(f64::total_cmp);
            assert_eq!(seen, (0..50).map(|i| i as f64).collect::<Vec<_>>());
        }
        assert!(sample_sequences(&pool, 1, 51, RngSeed(3)).is_err());
        let a = sample_sequences(&pool, 3, 10, RngSeed(8)).unwrap();
        let b = sample_sequences(&pool, 3, 10, RngSeed(8)).unwrap();
        assert_eq!(a, b);
    }
}
