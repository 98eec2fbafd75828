use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// A rendered report plus whether its asserted properties held.
pub struct Outcome {
    pub body: String,
    pub passed: bool,
}

impl Outcome {
    pub fn new(body: String, passed: bool) -> Self {
        Outcome { body, passed }
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// CSV text with a leading `# ...` comment line and a column header.
pub fn csv_table<I>(comment: &str, header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    if !header.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))?;
    Ok(format!("# {comment}\n{}", String::from_utf8(bytes)?))
}

pub fn emit(body: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_file(path, body),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 4.8e-27, 1e300, -0.0, 2.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(0.5), "0.5");
    }

    #[test]
    fn table_layout() {
        let t = csv_table("seed=3", &["a", "b"], vec![vec!["1".into(), num(0.25)]]).unwrap();
        assert_eq!(t, "# seed=3\na,b\n1,0.25\n");
    }
}
