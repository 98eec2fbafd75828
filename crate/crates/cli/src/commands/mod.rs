pub mod elb;
pub mod gradcheck;
pub mod norm;
pub mod shift;
pub mod signflip;

use anyhow::{bail, Context, Result};
use normlens::norm::{NormConfig, NormMethod};
use normlens::{ingest, EmbeddingFile, EmbeddingFormat, TokenBatch};

use crate::cli::{InputArgs, NormArgs};

/// Parses `name` or `unit_norm@K`.
pub fn norm_config(entry: &str, default_k: f64, eps: f64) -> Result<NormConfig> {
    let (name, k) = match entry.split_once('@') {
        Some((name, k)) => {
            let k: f64 = k.parse().with_context(|| format!("bad modulus in '{entry}'"))?;
            (name, Some(k))
        }
        None => (entry, None),
    };
    let method: NormMethod = name.trim().parse()?;
    if k.is_some() && method != NormMethod::UnitNorm {
        bail!("only unit_norm takes a modulus, got '{entry}'");
    }
    let cfg = match method {
        NormMethod::UnitNorm => NormConfig::unit_norm(k.unwrap_or(default_k)),
        m => NormConfig::new(m),
    };
    Ok(cfg.with_eps(eps))
}

impl NormArgs {
    pub fn config(&self) -> Result<NormConfig> {
        let cfg = norm_config(&self.method, self.k, self.eps)?;
        Ok(if self.strict { cfg.strict() } else { cfg })
    }
}

impl InputArgs {
    pub fn load(&self, dim: usize) -> Result<Option<TokenBatch>> {
        let Some(path) = &self.input else {
            return Ok(None);
        };
        let format: EmbeddingFormat = self.input_format.parse()?;
        let mut file = EmbeddingFile::new(path, format, dim);
        if let Some(limit) = self.limit {
            file = file.with_limit(limit);
        }
        let pool = ingest(&file).with_context(|| format!("loading {}", path.display()))?;
        Ok(Some(pool))
    }
}

/// Expands a scalar to `d` copies; otherwise requires exactly `d` values.
pub fn broadcast(name: &str, values: &[f64], d: usize) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; d]),
        n if n == d => Ok(values.to_vec()),
        n => bail!("--{name} has {n} values, expected 1 or {d}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_specs() {
        assert_eq!(norm_config("unit_norm@1", 1.5, 1e-5).unwrap().k, 1.0);
        assert_eq!(norm_config("unit_norm", 1.5, 1e-5).unwrap().label(), "unit_norm(k=1.5)");
        assert_eq!(norm_config("rms_norm", 1.5, 0.0).unwrap().method, NormMethod::RmsNorm);
        assert!(norm_config("rms_norm@2", 1.5, 0.0).is_err());
        assert!(norm_config("group_norm", 1.5, 0.0).is_err());
    }

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast("mu", &[2.0], 3).unwrap(), vec![2.0; 3]);
        assert!(broadcast("mu", &[1.0, 2.0], 3).is_err());
    }
}
