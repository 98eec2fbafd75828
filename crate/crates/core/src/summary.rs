//! Distribution summaries for metric samples.

use serde::{Deserialize, Serialize};

pub const HISTOGRAM_BINS: usize = 100;

/// Uniform-bin histogram over `[lo, hi]`. Values outside the range are
/// clamped into the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values.iter().filter(|v| v.is_finite()) {
            let idx = if width > 0.0 {
                (((v - lo) / width) * bins as f64).floor()
            } else {
                0.0
            };
            let idx = (idx.max(0.0) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl Summary {
    /// Summarizes the finite entries of `values`; the histogram spans
    /// `range`, or the observed `[min, max]` when `range` is `None`.
    pub fn from_values(values: &[f64], range: Option<(f64, f64)>) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let count = sorted.len();
        if count == 0 {
            let (lo, hi) = range.unwrap_or((0.0, 0.0));
            return Summary {
                count,
                mean: f64::NAN,
                median: f64::NAN,
                q05: f64::NAN,
                q95: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                histogram: Histogram::build(&[], lo, hi, HISTOGRAM_BINS),
            };
        }
        let mean = sorted.iter().sum::<f64>() / count as f64;
        let min = sorted[0];
        let max = sorted[count - 1];
        let (lo, hi) = range.unwrap_or((min, max));
        Summary {
            count,
            mean,
            median: quantile_sorted(&sorted, 0.5),
            q05: quantile_sorted(&sorted, 0.05),
            q95: quantile_sorted(&sorted, 0.95),
            min,
            max,
            histogram: Histogram::build(&sorted, lo, hi, HISTOGRAM_BINS),
        }
    }
}

/// Midpoint-interpolated quantile of sorted data: the average of the two
/// order statistics bracketing position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    0.5 * (sorted[lo] + sorted[hi])
}

/// Median of arbitrary (unsorted) finite data.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}
