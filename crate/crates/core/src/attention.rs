//! Self-attention scores and the attention-shift metrics.
//!
//! Queries and keys are the tokens themselves (no learned projections), so
//! row `i` of sequence `n` is `softmax(x[n,i] · x[n]ᵀ / sqrt(D))`.

use ndarray::{Array3, ArrayView1, Axis as NdAxis};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::norm::{normalize, NormConfig};
use crate::summary::Summary;
use crate::tensor::{softmax_in_place, TokenBatch};

/// Row-stochastic attention scores, shape `(N, L, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    rows: Array3<f64>,
}

impl AttentionScores {
    pub fn rows(&self) -> &Array3<f64> {
        &self.rows
    }

    pub fn row(&self, n: usize, i: usize) -> ArrayView1<'_, f64> {
        self.rows.slice(ndarray::s![n, i, ..])
    }

    pub fn batch(&self) -> usize {
        self.rows.dim().0
    }

    pub fn seq_len(&self) -> usize {
        self.rows.dim().1
    }
}

/// Attention rows of `x` with logits scaled by `1 / sqrt(scale_dim)`.
pub fn attention_scores(x: &TokenBatch, scale_dim: usize) -> AttentionScores {
    let (n, l, _) = x.shape();
    let inv_scale = 1.0 / (scale_dim as f64).sqrt();
    let mut rows = Array3::<f64>::zeros((n, l, l));
    rows.axis_iter_mut(NdAxis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut block)| {
            let seq = x.data().index_axis(NdAxis(0), b);
            let mut logits = seq.dot(&seq.t());
            logits.mapv_inplace(|v| v * inv_scale);
            for (i, mut row) in block.axis_iter_mut(NdAxis(0)).enumerate() {
                row.assign(&logits.row(i));
                softmax_in_place(row.as_slice_mut().expect("rows are contiguous"));
            }
        });
    AttentionScores { rows }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return invalid(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return invalid("empty probability vector");
    }
    Ok(())
}

/// Largest absolute coordinate difference.
pub fn chebyshev(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return invalid("cosine similarity of a zero vector");
    }
    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `KL(a ‖ b)`. Terms with `a_j = 0` contribute nothing; `b_j = 0` with
/// `a_j > 0` yields `+inf`.
pub fn kl_div(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let mut total = 0.0;
    for (&p, &q) in a.iter().zip(b) {
        if p > 0.0 {
            if q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += p * (p.ln() - q.ln());
        }
    }
    // Rounding can leave a tiny negative value for a == b.
    Ok(total.max(0.0))
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(a: &[f64]) -> f64 {
    let h: f64 = a
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Metrics for one anchor token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub i: usize,
    pub chebyshev: f64,
    pub cosine: f64,
    pub kl: f64,
    pub entropy_original: f64,
    pub entropy_normalized: f64,
}

impl MetricRow {
    pub const CSV_HEADER: [&'static str; 7] =
        ["n", "i", "chebyshev", "cosine", "kl", "entropy_orig", "entropy_norm"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDirections {
    pub chebyshev: Direction,
    pub cosine: Direction,
    pub kl: Direction,
    pub entropy: Direction,
}

impl Default for MetricDirections {
    fn default() -> Self {
        MetricDirections {
            chebyshev: Direction::LowerIsBetter,
            cosine: Direction::HigherIsBetter,
            kl: Direction::LowerIsBetter,
            entropy: Direction::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub chebyshev: Summary,
    pub cosine: Summary,
    pub kl: Summary,
    pub entropy_original: Summary,
    pub entropy_normalized: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: NormConfig,
    pub shape: [usize; 3],
    pub directions: MetricDirections,
    /// Rows whose KL divergence is infinite (normalized score underflowed
    /// to zero where the original was positive).
    pub kl_infinite: usize,
    pub summary: MetricSummaries,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn values(&self, f: impl Fn(&MetricRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Per-anchor rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = MetricRow::CSV_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{:?}\n",
                r.n, r.i, r.chebyshev, r.cosine, r.kl, r.entropy_original, r.entropy_normalized
            ));
        }
        out
    }
}

/// Compares attention of `x` with attention of `normalize(x, cfg)`.
pub fn shift_report(x: &TokenBatch, cfg: &NormConfig) -> Result<MetricReport> {
    let normalized = normalize(x, cfg)?;
    let d = x.dim();
    let original = attention_scores(x, d);
    let shifted = attention_scores(&normalized, d);
    Ok(compare_scores(&original, &shifted, cfg.clone(), x.shape()))
}

pub(crate) fn compare_scores(
    original: &AttentionScores,
    shifted: &AttentionScores,
    config: NormConfig,
    shape: (usize, usize, usize),
) -> MetricReport {
    let (n, l, _) = shape;
    let rows: Vec<MetricRow> = (0..n * l)
        .into_par_iter()
        .map(|idx| {
            let (b, i) = (idx / l, idx % l);
            let a = original.row(b, i).to_vec();
            let s = shifted.row(b, i).to_vec();
            MetricRow {
                n: b,
                i,
                chebyshev: chebyshev(&a, &s).expect("equal lengths"),
                cosine: cosine_sim(&a, &s).expect("softmax rows are nonzero"),
                kl: kl_div(&a, &s).expect("equal lengths"),
                entropy_original: entropy(&a),
                entropy_normalized: entropy(&s),
            }
        })
        .collect();

    let log_l = (l as f64).ln();
    let pick = |f: fn(&MetricRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let kl = pick(|r| r.kl);
    let kl_infinite = kl.iter().filter(|v| v.is_infinite()).count();
    let kl_max = kl.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let summary = MetricSummaries {
        chebyshev: Summary::from_values(&pick(|r| r.chebyshev), Some((0.0, 1.0))),
        cosine: Summary::from_values(&pick(|r| r.cosine), Some((0.0, 1.0))),
        kl: Summary::from_values(&kl, Some((0.0, kl_max))),
        entropy_original: Summary::from_values(&pick(|r| r.entropy_original), Some((0.0, log_l))),
        entropy_normalized: Summary::from_values(&pick(|r| r.entropy_normalized), Some((0.0, log_l))),
    };
    MetricReport {
        config,
        shape: [shape.0, shape.1, shape.2],
        directions: MetricDirections::default(),
        kl_infinite,
        summary,
        rows,
    }
}

/// Transformations of a softmax input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitTransform {
    /// `c · v` with `c > 0`.
    Stretch(f64),
    /// `v + a · 1`.
    Translate(f64),
    /// `-v`.
    Reflect,
}

impl LogitTransform {
    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        match self {
            LogitTransform::Stretch(c) => v.iter().map(|x| c * x).collect(),
            LogitTransform::Translate(a) => v.iter().map(|x| x + a).collect(),
            LogitTransform::Reflect => v.iter().map(|x| -x).collect(),
        }
    }
}

/// How a transform changed the importance order of softmax outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderEffect {
    Preserved,
    Reversed,
    Scrambled,
}

fn rank_order(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    idx
}

fn has_ties(p: &[f64]) -> bool {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// Effect of `transform` on the importance order of `softmax(v)`.
pub fn softmax_order_effect(v: &[f64], transform: LogitTransform) -> Result<OrderEffect> {
    if let LogitTransform::Stretch(c) = transform {
        if !(c > 0.0) {
            return invalid(format!("stretch factor must be positive, got {c}"));
        }
    }
    let before = crate::tensor::softmax_row(v)?;
    if has_ties(v) || has_ties(&before) {
        return invalid("importance order is undefined for tied entries");
    }
    let after = crate::tensor::softmax_row(&transform.apply(v))?;
    if has_ties(&after) {
        // distinct inputs collapsed by rounding; neither order survives
        return Ok(OrderEffect::Scrambled);
    }
    let o1 = rank_order(&before);
    let o2 = rank_order(&after);
    Ok(if o1 == o2 {
        OrderEffect::Preserved
    } else if o1.iter().eq(o2.iter().rev()) {
        OrderEffect::Reversed
    } else {
        OrderEffect::Scrambled
    })
}

/// Whether `transform` keeps the importance order of `softmax(v)`.
pub fn softmax_order_invariance(v: &[f64], transform: LogitTransform) -> Result<bool> {
    Ok(softmax_order_effect(v, transform)? == OrderEffect::Preserved)
}
