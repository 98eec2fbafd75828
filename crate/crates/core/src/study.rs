//! Attention-shift studies over several independent seeded sets.

use serde::{Deserialize, Serialize};

use crate::attention::{shift_report, MetricReport};
use crate::embedding::sample_sequences;
use crate::error::{invalid, Result};
use crate::norm::NormConfig;
use crate::summary::median;
use crate::tensor::{gaussian_batch, RngSeed, TokenBatch};

/// Where the token sequences of each set come from.
#[derive(Debug, Clone, PartialEq)]
pub enum StudySource {
    /// Independent Gaussian features with per-feature mean and variance.
    Synthetic { mu: Vec<f64>, sigma2: Vec<f64> },
    /// A token pool; each sequence draws distinct tokens from it.
    Pool(TokenBatch),
}

impl StudySource {
    pub fn dim(&self) -> usize {
        match self {
            StudySource::Synthetic { mu, .. } => mu.len(),
            StudySource::Pool(p) => p.dim(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            StudySource::Synthetic { .. } => "synthetic",
            StudySource::Pool(_) => "embedding",
        }
    }

    fn draw(&self, n: usize, l: usize, seed: RngSeed) -> Result<TokenBatch> {
        match self {
            StudySource::Synthetic { mu, sigma2 } => gaussian_batch(n, l, mu, sigma2, seed),
            StudySource::Pool(pool) => sample_sequences(pool, n, l, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub methods: Vec<NormConfig>,
    pub sets: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub seed: RngSeed,
}

/// Medians of one method, pooled over every anchor of every set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub config: NormConfig,
    pub median_chebyshev: f64,
    pub median_cosine: f64,
    pub median_kl: f64,
    pub median_entropy_original: f64,
    pub median_entropy_normalized: f64,
    pub kl_infinite: usize,
    pub set_median_chebyshev: Vec<f64>,
    pub set_median_entropy_normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub seed: RngSeed,
    pub source: String,
    pub shape: [usize; 3],
    pub sets: usize,
    pub set_seeds: Vec<RngSeed>,
    pub methods: Vec<MethodSummary>,
    /// Labels sorted by median Chebyshev distance, smallest first.
    pub chebyshev_order: Vec<String>,
    /// Labels sorted by median normalized entropy, largest first.
    pub entropy_order: Vec<String>,
}

impl StudySummary {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub summary: StudySummary,
    /// `reports[method][set]`.
    pub reports: Vec<Vec<MetricReport>>,
}

/// Runs `shift_report` for every method on every set. All methods see the
/// same sequences within a set.
pub fn run_shift_study(source: &StudySource, cfg: &StudyConfig) -> Result<StudyResult> {
    if cfg.methods.is_empty() {
        return invalid("at least one normalization method is required");
    }
    if cfg.sets == 0 {
        return invalid("at least one set is required");
    }
    let set_seeds: Vec<RngSeed> = (0..cfg.sets as u64).map(|s| cfg.seed.derive(s)).collect();
    let mut reports: Vec<Vec<MetricReport>> = vec![Vec::with_capacity(cfg.sets); cfg.methods.len()];
    for &s in &set_seeds {
        let x = source.draw(cfg.batch, cfg.seq_len, s)?;
        for (m, method) in cfg.methods.iter().enumerate() {
            reports[m].push(shift_report(&x, method)?);
        }
    }

    let methods: Vec<MethodSummary> = cfg
        .methods
        .iter()
        .zip(&reports)
        .map(|(method, sets)| {
            let pooled = |f: fn(&crate::attention::MetricRow) -> f64| {
                sets.iter().flat_map(|r| r.values(f)).collect::<Vec<_>>()
            };
            MethodSummary {
                label: method.label(),
                config: method.clone(),
                median_chebyshev: median(&pooled(|r| r.chebyshev)),
                median_cosine: median(&pooled(|r| r.cosine)),
                median_kl: median(&pooled(|r| r.kl)),
                median_entropy_original: median(&pooled(|r| r.entropy_original)),
                median_entropy_normalized: median(&pooled(|r| r.entropy_normalized)),
                kl_infinite: sets.iter().map(|r| r.kl_infinite).sum(),
                set_median_chebyshev: sets.iter().map(|r| r.summary.chebyshev.median).collect(),
                set_median_entropy_normalized: sets
                    .iter()
                    .map(|r| r.summary.entropy_normalized.median)
                    .collect(),
            }
        })
        .collect();

    let order = |key: fn(&MethodSummary) -> f64| {
        let mut v: Vec<&MethodSummary> = methods.iter().collect();
        v.sort_by(|a, b| key(a).total_cmp(&key(b)));
        v.into_iter().map(|m| m.label.clone()).collect::<Vec<_>>()
    };
    let chebyshev_order = order(|m| m.median_chebyshev);
    let entropy_order = order(|m| -m.median_entropy_normalized);

    Ok(StudyResult {
        summary: StudySummary {
            seed: cfg.seed,
            source: source.kind().to_string(),
            shape: [cfg.batch, cfg.seq_len, source.dim()],
            sets: cfg.sets,
            set_seeds,
            methods,
            chebyshev_order,
            entropy_order,
        },
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::NormMethod;

    fn synthetic(d: usize, mu: f64) -> StudySource {
        StudySource::Synthetic {
            mu: vec![mu; d],
            sigma2: vec![1.0; d],
        }
    }

    #[test]
    fn single_token_sequences_do_not_shift() {
        let cfg = StudyConfig {
            methods: vec![NormConfig::new(NormMethod::LayerNormPractice)],
            sets: 1,
            batch: 4,
            seq_len: 1,
            seed: RngSeed(1),
        };
        let res = run_shift_study(&synthetic(8, 0.5), &cfg).unwrap();
        let m = &res.summary.methods[0];
        assert_eq!(m.median_chebyshev, 0.0);
        assert_eq!(res.reports[0][0].rows.len(), 4);
        assert!(res.reports[0][0].rows.iter().all(|r| r.chebyshev == 0.0 && r.cosine == 1.0));
    }

    #[test]
    fn deterministic_and_paired() {
        let cfg = StudyConfig {
            methods: vec![NormConfig::unit_norm(1.0), NormConfig::new(NormMethod::RmsNorm)],
            sets: 3,
            batch: 2,
            seq_len: 5,
            seed: RngSeed(11),
        };
        let a = run_shift_study(&synthetic(6, 1.0), &cfg).unwrap();
        let b = run_shift_study(&synthetic(6, 1.0), &cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.summary.set_seeds.len(), 3);
        assert_ne!(a.summary.set_seeds[0], a.summary.set_seeds[1]);
        // RMSNorm is UnitNorm with k = 1, so the paired reports coincide.
        for s in 0..3 {
            for (u, r) in a.reports[0][s].rows.iter().zip(&a.reports[1][s].rows) {
                assert!((u.chebyshev - r.chebyshev).abs() < 1e-12);
            }
        }
        assert_eq!(a.summary.chebyshev_order.len(), 2);
    }

    #[test]
    fn pool_source() {
        let values: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let pool = TokenBatch::from_vec(1, 10, 4, values).unwrap();
        let cfg = StudyConfig {
            methods: vec![NormConfig::unit_norm(1.5)],
            sets: 2,
            batch: 3,
            seq_len: 4,
            seed: RngSeed(2),
        };
        let res = run_shift_study(&StudySource::Pool(pool), &cfg).unwrap();
        assert_eq!(res.summary.source, "embedding");
        assert_eq!(res.summary.shape, [3, 4, 4]);
    }

    #[test]
    fn rejects_empty_configs() {
        let mut cfg = StudyConfig {
            methods: vec![],
            sets: 1,
            batch: 1,
            seq_len: 1,
            seed: RngSeed(0),
        };
        assert!(run_shift_study(&synthetic(2, 0.0), &cfg).is_err());
        cfg.methods.push(NormConfig::unit_norm(1.0));
        cfg.sets = 0;
        assert!(run_shift_study(&synthetic(2, 0.0), &cfg).is_err());
    }
}
