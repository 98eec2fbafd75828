//! Forward transforms for the five normalization methods.
//!
//! | method              | statistics over        | output                          |
//! |---------------------|------------------------|---------------------------------|
//! | `BatchNorm`         | batch, sequence        | `(x - mu) / sqrt(var + eps)`    |
//! | `LayerNormTheory`   | sequence, feature      | `(x - mu) / sqrt(var + eps)`    |
//! | `LayerNormPractice` | feature                | `(x - mu) / sqrt(var + eps)`    |
//! | `RmsNorm`           | feature (L2 norm)      | `sqrt(D) * x / ‖x‖`             |
//! | `UnitNorm`          | feature (L2 norm)      | `D^(k/2) * x / ‖x‖`             |
//!
//! All but `UnitNorm` accept an optional per-feature affine `gamma * y + beta`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis as NdAxis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{axis_stats, Axis, TokenBatch};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_NORM_FLOOR: f64 = 1e-12;
pub const DEFAULT_UNIT_NORM_K: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    BatchNorm,
    LayerNormTheory,
    LayerNormPractice,
    RmsNorm,
    UnitNorm,
}

impl NormMethod {
    pub const ALL: [NormMethod; 5] = [
        NormMethod::BatchNorm,
        NormMethod::LayerNormTheory,
        NormMethod::LayerNormPractice,
        NormMethod::RmsNorm,
        NormMethod::UnitNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormMethod::BatchNorm => "batch_norm",
            NormMethod::LayerNormTheory => "layer_norm_theory",
            NormMethod::LayerNormPractice => "layer_norm_practice",
            NormMethod::RmsNorm => "rms_norm",
            NormMethod::UnitNorm => "unit_norm",
        }
    }

    /// Axes the center-and-scale statistics are taken over, if any.
    pub fn stat_axes(self) -> Option<&'static [Axis]> {
        match self {
            NormMethod::BatchNorm => Some(&[Axis::Batch, Axis::Sequence]),
            NormMethod::LayerNormTheory => Some(&[Axis::Sequence, Axis::Feature]),
            NormMethod::LayerNormPractice => Some(&[Axis::Feature]),
            NormMethod::RmsNorm | NormMethod::UnitNorm => None,
        }
    }

    pub fn supports_affine(self) -> bool {
        self != NormMethod::UnitNorm
    }
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "batchnorm" | "bn" => NormMethod::BatchNorm,
            "layernormtheory" | "lntheory" => NormMethod::LayerNormTheory,
            "layernormpractice" | "layernorm" | "ln" | "lnpractice" => NormMethod::LayerNormPractice,
            "rmsnorm" | "rms" => NormMethod::RmsNorm,
            "unitnorm" | "unit" => NormMethod::UnitNorm,
            _ => return invalid(format!("unknown normalization method '{s}'")),
        })
    }
}

/// Per-feature affine `gamma * y + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Affine {
    pub fn identity(d: usize) -> Self {
        Affine {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }
}

/// What to do with a token whose L2 norm is below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ZeroNormPolicy {
    /// Divide by `max(‖x‖, floor)`.
    Guard { floor: f64 },
    /// Fail with [`Error::DegenerateNorm`].
    Strict { floor: f64 },
}

impl Default for ZeroNormPolicy {
    fn default() -> Self {
        ZeroNormPolicy::Guard {
            floor: DEFAULT_NORM_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub method: NormMethod,
    pub eps: f64,
    /// UnitNorm modulus; ignored by the other methods.
    pub k: f64,
    pub affine: Option<Affine>,
    pub zero_norm: ZeroNormPolicy,
}

impl NormConfig {
    pub fn new(method: NormMethod) -> Self {
        NormConfig {
            method,
            eps: DEFAULT_EPS,
            k: DEFAULT_UNIT_NORM_K,
            affine: None,
            zero_norm: ZeroNormPolicy::default(),
        }
    }

    pub fn unit_norm(k: f64) -> Self {
        NormConfig {
            k,
            ..Self::new(NormMethod::UnitNorm)
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_affine(mut self, affine: Affine) -> Self {
        self.affine = Some(affine);
        self
    }

    pub fn strict(mut self) -> Self {
        let floor = match self.zero_norm {
            ZeroNormPolicy::Guard { floor } | ZeroNormPolicy::Strict { floor } => floor,
        };
        self.zero_norm = ZeroNormPolicy::Strict { floor };
        self
    }

    /// Short label such as `unit_norm(k=1.5)`.
    pub fn label(&self) -> String {
        match self.method {
            NormMethod::UnitNorm => format!("unit_norm(k={})", self.k),
            m => m.name().to_string(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return invalid(format!("eps must be finite and >= 0, got {}", self.eps));
        }
        if self.method == NormMethod::UnitNorm && !self.k.is_finite() {
            return invalid(format!("k must be finite, got {}", self.k));
        }
        if let Some(aff) = &self.affine {
            if !self.method.supports_affine() {
                return invalid("UnitNorm takes no affine parameters");
            }
            if aff.gamma.len() != d || aff.beta.len() != d {
                return invalid(format!(
                    "affine shape mismatch: gamma {}, beta {}, D {d}",
                    aff.gamma.len(),
                    aff.beta.len()
                ));
            }
        }
        Ok(())
    }
}

/// Euclidean norm of every token, shape `(N, L)`.
pub fn token_l2_norms(x: &TokenBatch) -> Array2<f64> {
    x.data()
        .map_axis(NdAxis(2), |t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Applies `cfg` to `x`.
pub fn normalize(x: &TokenBatch, cfg: &NormConfig) -> Result<TokenBatch> {
    let d = x.dim();
    cfg.validate(d)?;

    let mut out = match cfg.method.stat_axes() {
        Some(axes) => {
            let (mean, var) = axis_stats(x, axes)?;
            let denom = var.mapv(|v| (v + cfg.eps).sqrt());
            if denom.iter().any(|&s| s == 0.0) {
                return invalid(format!(
                    "{} statistics have zero variance and eps = 0",
                    cfg.method.name()
                ));
            }
            (x.data() - &mean) / &denom
        }
        None => {
            let scale = match cfg.method {
                NormMethod::RmsNorm => (d as f64).sqrt(),
                _ => (d as f64).powf(cfg.k / 2.0),
            };
            let norms = token_l2_norms(x);
            let mut out = x.data().to_owned();
            for ((n, l), &norm) in norms.indexed_iter() {
                let denom = match cfg.zero_norm {
                    ZeroNormPolicy::Guard { floor } => norm.max(floor),
                    ZeroNormPolicy::Strict { floor } => {
                        if norm < floor {
                            return Err(Error::DegenerateNorm { n, l, norm });
                        }
                        norm
                    }
                };
                let factor = scale / denom;
                out.slice_mut(ndarray::s![n, l, ..]).mapv_inplace(|v| v * factor);
            }
            out
        }
    };

    if let Some(aff) = &cfg.affine {
        for mut token in out.lanes_mut(NdAxis(2)) {
            Zip::from(&mut token)
                .and(&aff.gamma[..])
                .and(&aff.beta[..])
                .for_each(|v, &g, &b| *v = g * *v + b);
        }
    }

    // Large eps-free outputs can still overflow if inputs are extreme.
    TokenBatch::new(out)
}
