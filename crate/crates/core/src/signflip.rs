//! Dot-product sign flips caused by center-and-scale standardization.
//!
//! For independent Gaussian tokens `x ~ N(mu_x, diag(sigma2_x))` and
//! `y ~ N(mu_y, diag(sigma2_y))`, this module provides the closed-form
//! moments of `xᵀy`, the sufficient condition under which standardization
//! flips the sign of `xᵀy` with probability at least 0.40, the shared-mean
//! special case of that condition, and a Monte Carlo estimator of the flip
//! probability itself.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::RngSeed;

/// Flip-probability lower bound guaranteed under [`theorem_condition`].
pub const FLIP_PROBABILITY_BOUND: f64 = 0.40;
/// Bound on `Pr(xᵀy <= 0)` used to reach [`FLIP_PROBABILITY_BOUND`].
pub const NONPOSITIVE_PROBABILITY_BOUND: f64 = 0.10;
/// Smallest dimension for which the shared-mean condition is sufficient.
pub const COROLLARY_MIN_DIM: usize = 77;
pub const DEFAULT_SAMPLES: usize = 100_000;

const CHUNK: usize = 4096;

/// Two independent diagonal-Gaussian token distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTokenModel {
    pub mu_x: Vec<f64>,
    pub sigma2_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma2_y: Vec<f64>,
}

impl GaussianTokenModel {
    pub fn new(mu_x: Vec<f64>, sigma2_x: Vec<f64>, mu_y: Vec<f64>, sigma2_y: Vec<f64>) -> Result<Self> {
        let d = mu_x.len();
        if d == 0 {
            return invalid("model dimension must be positive");
        }
        if sigma2_x.len() != d || mu_y.len() != d || sigma2_y.len() != d {
            return invalid("model vectors must all have the same length");
        }
        let all = mu_x.iter().chain(&sigma2_x).chain(&mu_y).chain(&sigma2_y);
        if all.clone().any(|v| !v.is_finite()) {
            return invalid("model parameters must be finite");
        }
        if sigma2_x.iter().chain(&sigma2_y).any(|&v| v < 0.0) {
            return invalid("variances must be non-negative");
        }
        Ok(GaussianTokenModel {
            mu_x,
            sigma2_x,
            mu_y,
            sigma2_y,
        })
    }

    /// Both tokens share the constant mean `mu` and variance `sigma2` in
    /// every coordinate.
    pub fn shared(d: usize, mu: f64, sigma2: f64) -> Result<Self> {
        Self::new(vec![mu; d], vec![sigma2; d], vec![mu; d], vec![sigma2; d])
    }

    pub fn dim(&self) -> usize {
        self.mu_x.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `E[xᵀy] = mu_xᵀ mu_y`.
pub fn dot_mean(model: &GaussianTokenModel) -> f64 {
    dot(&model.mu_x, &model.mu_y)
}

/// `Var(xᵀy) = sigma2_xᵀ sigma2_y + sigma2_yᵀ mu_x² + sigma2_xᵀ mu_y²`.
pub fn dot_variance(model: &GaussianTokenModel) -> f64 {
    model
        .mu_x
        .iter()
        .zip(&model.sigma2_x)
        .zip(model.mu_y.iter().zip(&model.sigma2_y))
        .map(|((mx, sx), (my, sy))| sx * sy + sy * mx * mx + sx * my * my)
        .sum()
}

/// Both sides of the sufficient sign-flip condition `lhs >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSides {
    pub lhs: f64,
    pub rhs: f64,
}

impl ConditionSides {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs
    }
}

/// Evaluates
/// `|mu_xᵀmu_y| >= 12 (sqrt(σx²ᵀσy²) + ‖σx∘σy‖∞)
///   + 5 (sqrt(σy²ᵀmu_x²) + sqrt(σx²ᵀmu_y²) + ‖σy∘|mu_x|‖∞ + ‖σx∘|mu_y|‖∞)`.
pub fn theorem_sides(model: &GaussianTokenModel) -> ConditionSides {
    let sx: Vec<f64> = model.sigma2_x.iter().map(|v| v.sqrt()).collect();
    let sy: Vec<f64> = model.sigma2_y.iter().map(|v| v.sqrt()).collect();
    let mx2: Vec<f64> = model.mu_x.iter().map(|m| m * m).collect();
    let my2: Vec<f64> = model.mu_y.iter().map(|m| m * m).collect();
    let max_prod = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p * q).abs())
            .fold(0.0, f64::max)
    };

    let lhs = dot_mean(model).abs();
    let variance_terms = dot(&model.sigma2_x, &model.sigma2_y).sqrt() + max_prod(&sx, &sy);
    let mean_terms = dot(&model.sigma2_y, &mx2).sqrt()
        + dot(&model.sigma2_x, &my2).sqrt()
        + max_prod(&sy, &model.mu_x)
        + max_prod(&sx, &model.mu_y);
    ConditionSides {
        lhs,
        rhs: 12.0 * variance_terms + 5.0 * mean_terms,
    }
}

pub fn theorem_condition(model: &GaussianTokenModel) -> bool {
    theorem_sides(model).holds()
}

/// `6 / d^(1/4)`, the mean-to-deviation threshold of the shared-mean case.
pub fn corollary_threshold(d: usize) -> f64 {
    6.0 / (d as f64).sqrt().sqrt()
}

/// Shared-mean sufficient condition: both `mu/sigma` ratios reach
/// `6 / d^(1/4)` and `d >= 77`.
pub fn corollary_condition(mu_x: f64, sigma_x: f64, mu_y: f64, sigma_y: f64, d: usize) -> Result<bool> {
    if !(sigma_x > 0.0) || !(sigma_y > 0.0) {
        return invalid(format!("standard deviations must be positive, got {sigma_x}, {sigma_y}"));
    }
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let t = corollary_threshold(d);
    Ok(mu_x / sigma_x >= t && mu_y / sigma_y >= t && d >= COROLLARY_MIN_DIM)
}

/// For the shared model with unit variance and mean `ratio` in dimension
/// `d`, whether the shared-mean condition implies the general one.
pub fn corollary_implies_theorem_check(d: usize, ratio: f64) -> Result<bool> {
    if d == 0 || !(ratio > 0.0) {
        return invalid(format!("need d >= 1 and ratio > 0, got d={d}, ratio={ratio}"));
    }
    let premise = corollary_condition(ratio, 1.0, ratio, 1.0, d)?;
    let model = GaussianTokenModel::shared(d, ratio, 1.0)?;
    Ok(!premise || theorem_condition(&model))
}

/// How standardized tokens are formed inside the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// `(x - mu_x) / sigma_x` with the true model parameters.
    #[default]
    ModelParameters,
    /// Per-token sample mean and population standard deviation over the
    /// features, as a LayerNorm would compute them.
    TokenStatistics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignFlipEstimate {
    pub p_hat: f64,
    pub n_samples: usize,
    pub std_err: f64,
    pub seed: RngSeed,
    pub standardization: Standardization,
    /// Fraction of samples with `xᵀy <= 0`.
    pub p_raw_nonpositive: f64,
    /// Fraction of samples with `x̃ᵀỹ > 0`.
    pub p_standardized_positive: f64,
}

impl SignFlipEstimate {
    /// `p_hat + z · std_err`.
    pub fn upper(&self, z: f64) -> f64 {
        self.p_hat + z * self.std_err
    }
}

pub fn bernoulli_std_err(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Default, Clone, Copy)]
struct Counts {
    flips: u64,
    raw_nonpositive: u64,
    std_positive: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            flips: self.flips + o.flips,
            raw_nonpositive: self.raw_nonpositive + o.raw_nonpositive,
            std_positive: self.std_positive + o.std_positive,
        }
    }
}

fn standardize_by_token(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

/// Monte Carlo estimate of `Pr(sign(xᵀy) != sign(x̃ᵀỹ))`.
///
/// Samples are split into fixed chunks, each drawn from its own sub-stream
/// of `seed`, so the result does not depend on the number of threads.
/// A dot product that is exactly zero never counts as a flip.
pub fn estimate_signflip(
    model: &GaussianTokenModel,
    n_samples: usize,
    seed: RngSeed,
    mode: Standardization,
) -> Result<SignFlipEstimate> {
    if n_samples == 0 {
        return invalid("n_samples must be at least 1");
    }
    if mode == Standardization::ModelParameters
        && model.sigma2_x.iter().chain(&model.sigma2_y).any(|&v| v <= 0.0)
    {
        return invalid("every coordinate variance must be positive to standardize");
    }
    let d = model.dim();
    let sx: Vec<f64> = model.sigma2_x.iter().map(|v| v.sqrt()).collect();
    let sy: Vec<f64> = model.sigma2_y.iter().map(|v| v.sqrt()).collect();
    let n_chunks = n_samples.div_ceil(CHUNK);

    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.stream(c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut xs = vec![0.0; d];
            let mut ys = vec![0.0; d];
            let mut counts = Counts::default();
            for _ in 0..len {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[j] = model.mu_x[j] + sx[j] * z;
                }
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y[j] = model.mu_y[j] + sy[j] * z;
                }
                match mode {
                    Standardization::ModelParameters => {
                        for j in 0..d {
                            xs[j] = (x[j] - model.mu_x[j]) / sx[j];
                            ys[j] = (y[j] - model.mu_y[j]) / sy[j];
                        }
                    }
                    Standardization::TokenStatistics => {
                        xs.copy_from_slice(&x);
                        ys.copy_from_slice(&y);
                        standardize_by_token(&mut xs);
                        standardize_by_token(&mut ys);
                    }
                }
                let raw = dot(&x, &y);
                let std = dot(&xs, &ys);
                if (raw > 0.0 && std < 0.0) || (raw < 0.0 && std > 0.0) {
                    counts.flips += 1;
                }
                if raw <= 0.0 {
                    counts.raw_nonpositive += 1;
                }
                if std > 0.0 {
                    counts.std_positive += 1;
                }
            }
            counts
        })
        .reduce(Counts::default, |a, b| a + b);

    let n = n_samples as f64;
    let p_hat = counts.flips as f64 / n;
    Ok(SignFlipEstimate {
        p_hat,
        n_samples,
        std_err: bernoulli_std_err(p_hat, n_samples),
        seed,
        standardization: mode,
        p_raw_nonpositive: counts.raw_nonpositive as f64 / n,
        p_standardized_positive: counts.std_positive as f64 / n,
    })
}

/// Draws `n` samples of `xᵀy`, chunked over sub-streams of `seed` like
/// [`estimate_signflip`].
pub fn sample_dot_products(model: &GaussianTokenModel, n: usize, seed: RngSeed) -> Result<Vec<f64>> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let d = model.dim();
    let sx: Vec<f64> = model.sigma2_x.iter().map(|v| v.sqrt()).collect();
    let sy: Vec<f64> = model.sigma2_y.iter().map(|v| v.sqrt()).collect();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut x = vec![0.0; d];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[j] = model.mu_x[j] + sx[j] * z;
                }
                let mut acc = 0.0;
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    acc += x[j] * (model.mu_y[j] + sy[j] * z);
                }
                out.push(acc);
            }
            out
        })
        .collect();
    Ok(chunks.concat())
}

/// One row of a dimension sweep over shared-mean models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub ratio: f64,
    pub condition_holds: bool,
    pub p_hat: f64,
    pub std_err: f64,
}

impl SweepRow {
    pub const CSV_HEADER: [&'static str; 5] = ["D", "ratio", "condition_holds", "p_hat", "std_err"];
}

/// Sign-flip estimates for unit-variance shared-mean models at
/// `mu = 6 / D^(1/4)` for every `D` in `dims`.
pub fn corollary_sweep(dims: &[usize], n_samples: usize, seed: RngSeed) -> Result<Vec<SweepRow>> {
    dims.iter()
        .map(|&d| {
            if d == 0 {
                return invalid("dimension must be positive");
            }
            let ratio = corollary_threshold(d);
            let model = GaussianTokenModel::shared(d, ratio, 1.0)?;
            let est = estimate_signflip(&model, n_samples, seed, Standardization::ModelParameters)?;
            Ok(SweepRow {
                d,
                ratio,
                condition_holds: theorem_condition(&model),
                p_hat: est.p_hat,
                std_err: est.std_err,
            })
        })
        .collect()
}
