//! Dense token batches, axis statistics, seeded Gaussian sampling and softmax.
//!
//! Every array is `f64`. Variances are population (divide-by-count)
//! variances throughout.
//!
//! Random streams come from ChaCha8 seeded with a 64-bit seed; independent
//! sub-streams are selected with the ChaCha stream counter, so a worker that
//! owns chunk `i` of a computation always draws from stream `i` no matter how
//! many threads exist. Standard normal variates use the Ziggurat sampler from
//! `rand_distr`.

use ndarray::{Array3, ArrayView1, Axis as NdAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Seed for every stochastic operation in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Primary stream for this seed.
    pub fn rng(self) -> ChaCha8Rng {
        self.stream(0)
    }

    /// Independent sub-stream `index` of this seed.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }

    /// A new seed derived from this one, for seed-indexed experiment sets.
    pub fn derive(self, index: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

/// Batch of token sequences, shape `(N, L, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    data: Array3<f64>,
}

impl TokenBatch {
    /// Wraps an array, rejecting empty dimensions and non-finite entries.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (n, l, d) = data.dim();
        if n == 0 || l == 0 || d == 0 {
            return invalid(format!("token batch dims must be positive, got ({n}, {l}, {d})"));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return invalid(format!("token batch contains non-finite value {bad}"));
        }
        Ok(TokenBatch { data })
    }

    pub fn from_vec(n: usize, l: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * l * d {
            return invalid(format!(
                "expected {} values for shape ({n}, {l}, {d}), got {}",
                n * l * d,
                values.len()
            ));
        }
        let data = Array3::from_shape_vec((n, l, d), values)
            .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        Self::new(data)
    }

    /// Constructs without validation. Callers guarantee shape and finiteness.
    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        TokenBatch { data }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn seq_len(&self) -> usize {
        self.data.dim().1
    }

    pub fn dim(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn token(&self, n: usize, l: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![n, l, ..])
    }

    /// Multiplies every entry by `alpha`.
    pub fn scaled(&self, alpha: f64) -> TokenBatch {
        TokenBatch::from_array_unchecked(&self.data * alpha)
    }
}

/// One of the three axes of a [`TokenBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Batch,
    Sequence,
    Feature,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::Batch => 0,
            Axis::Sequence => 1,
            Axis::Feature => 2,
        }
    }
}

/// Non-empty set of axes to reduce over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisSet([bool; 3]);

impl AxisSet {
    pub fn new(axes: &[Axis]) -> Result<Self> {
        if axes.is_empty() {
            return invalid("axis set must be non-empty");
        }
        let mut mask = [false; 3];
        for a in axes {
            mask[a.index()] = true;
        }
        Ok(AxisSet(mask))
    }

    pub fn contains(&self, axis: Axis) -> bool {
        self.0[axis.index()]
    }
}

/// Population mean and variance over `axes`.
///
/// Reduced axes are kept with length 1, so both results broadcast against
/// the input shape.
pub fn axis_stats(x: &TokenBatch, axes: &[Axis]) -> Result<(Array3<f64>, Array3<f64>)> {
    let set = AxisSet::new(axes)?;
    let data = x.data();

    let mut mean = data.to_owned();
    for ax in 0..3 {
        if set.0[ax] {
            mean = mean
                .mean_axis(NdAxis(ax))
                .expect("axis is non-empty")
                .insert_axis(NdAxis(ax));
        }
    }

    let mut var = data - &mean;
    var.mapv_inplace(|v| v * v);
    for ax in 0..3 {
        if set.0[ax] {
            var = var
                .mean_axis(NdAxis(ax))
                .expect("axis is non-empty")
                .insert_axis(NdAxis(ax));
        }
    }
    Ok((mean, var))
}

/// Draws an `(n, l, D)` batch with feature `d` distributed as
/// `Normal(mu[d], sigma2[d])`, independently across tokens.
pub fn gaussian_batch(
    n: usize,
    l: usize,
    mu: &[f64],
    sigma2: &[f64],
    seed: RngSeed,
) -> Result<TokenBatch> {
    let d = mu.len();
    if n == 0 || l == 0 || d == 0 {
        return invalid(format!("dims must be positive, got ({n}, {l}, {d})"));
    }
    if sigma2.len() != d {
        return invalid(format!("mu has length {d} but sigma2 has length {}", sigma2.len()));
    }
    if let Some(v) = sigma2.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return invalid(format!("variances must be finite and non-negative, got {v}"));
    }
    if mu.iter().any(|m| !m.is_finite()) {
        return invalid("means must be finite");
    }
    let sigma: Vec<f64> = sigma2.iter().map(|v| v.sqrt()).collect();
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(n * l * d);
    for _ in 0..n * l {
        for (m, s) in mu.iter().zip(&sigma) {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(m + s * z);
        }
    }
    let data = Array3::from_shape_vec((n, l, d), values).expect("length matches shape");
    Ok(TokenBatch::from_array_unchecked(data))
}

/// Softmax with max-subtraction. Rejects NaN and infinite inputs.
pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return invalid("softmax of an empty vector");
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return invalid(format!("softmax input contains {bad}"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked in-place softmax for finite inputs.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    #[test]
    fn degenerate_gaussian_is_exact() {
        let b = gaussian_batch(3, 4, &[0.0; 5], &[0.0; 5], RngSeed(1)).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));

        let b = gaussian_batch(1, 1, &[5.0, 5.0], &[0.0, 0.0], RngSeed(9)).unwrap();
        assert_eq!(b.token(0, 0).to_vec(), vec![5.0, 5.0]);
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        // 4 sigma / sqrt(1e6) = 4e-3
        let b = gaussian_batch(1000, 1000, &[0.0; 4], &[1.0; 4], RngSeed(42)).unwrap();
        let (mean, _) = axis_stats(&b, &[Axis::Batch, Axis::Sequence]).unwrap();
        for m in mean.iter() {
            assert!(m.abs() < 4e-3, "mean {m}");
        }
    }

    #[test]
    fn gaussian_rejects_bad_args() {
        assert!(gaussian_batch(1, 1, &[0.0], &[-1.0], RngSeed(0)).is_err());
        assert!(gaussian_batch(0, 1, &[0.0], &[1.0], RngSeed(0)).is_err());
        assert!(gaussian_batch(1, 1, &[], &[], RngSeed(0)).is_err());
        assert!(gaussian_batch(1, 1, &[0.0, 1.0], &[1.0], RngSeed(0)).is_err());
    }

    #[test]
    fn gaussian_is_reproducible() {
        let a = gaussian_batch(2, 3, &[1.0, 2.0], &[0.5, 2.0], RngSeed(77)).unwrap();
        let b = gaussian_batch(2, 3, &[1.0, 2.0], &[0.5, 2.0], RngSeed(77)).unwrap();
        let c = gaussian_batch(2, 3, &[1.0, 2.0], &[0.5, 2.0], RngSeed(78)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_row(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|&x| x == 0.25));

        let p = softmax_row(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1].is_finite() && p[1] < 1e-300);

        let p = softmax_row(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-5);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax_row(&[0.0, f64::NAN]).is_err());
        assert!(softmax_row(&[f64::INFINITY]).is_err());
        assert!(softmax_row(&[]).is_err());
    }

    #[test]
    fn axis_stats_examples() {
        let b = TokenBatch::new(Array3::from_elem((2, 3, 4), 7.5)).unwrap();
        for axes in [&[Axis::Batch][..], &[Axis::Feature], &[Axis::Batch, Axis::Sequence, Axis::Feature]] {
            let (m, v) = axis_stats(&b, axes).unwrap();
            assert!(m.iter().all(|&x| x == 7.5));
            assert!(v.iter().all(|&x| x == 0.0));
        }

        let b = TokenBatch::from_vec(1, 1, 2, vec![1.0, 3.0]).unwrap();
        let (m, v) = axis_stats(&b, &[Axis::Feature]).unwrap();
        assert_eq!(m.dim(), (1, 1, 1));
        assert_eq!(m[[0, 0, 0]], 2.0);
        assert_eq!(v[[0, 0, 0]], 1.0);
    }

    #[test]
    fn axis_stats_keeps_reduced_dims() {
        let b = gaussian_batch(2, 3, &[0.0; 4], &[1.0; 4], RngSeed(3)).unwrap();
        let (m, _) = axis_stats(&b, &[Axis::Batch, Axis::Sequence]).unwrap();
        assert_eq!(m.dim(), (1, 1, 4));
        let (m, _) = axis_stats(&b, &[Axis::Sequence, Axis::Feature]).unwrap();
        assert_eq!(m.dim(), (2, 1, 1));
        assert!(axis_stats(&b, &[]).is_err());
    }

    #[test]
    fn variance_matches_moment_identity() {
        let b = gaussian_batch(4, 5, &[0.3, -1.0, 2.0], &[1.0, 0.5, 3.0], RngSeed(11)).unwrap();
        let (m, v) = axis_stats(&b, &[Axis::Sequence, Axis::Feature]).unwrap();
        for n in 0..4 {
            let vals: Vec<f64> = b.data().slice(ndarray::s![n, .., ..]).iter().copied().collect();
            let c = vals.len() as f64;
            let ex = vals.iter().sum::<f64>() / c;
            let ex2 = vals.iter().map(|x| x * x).sum::<f64>() / c;
            assert_abs_diff_eq!(m[[n, 0, 0]], ex, epsilon = 1e-12);
            assert_abs_diff_eq!(v[[n, 0, 0]], ex2 - ex * ex, epsilon = 1e-12);
        }
    }

    #[test]
    fn token_batch_rejects_non_finite() {
        assert!(TokenBatch::from_vec(1, 1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(TokenBatch::from_vec(1, 1, 2, vec![1.0]).is_err());
        assert!(TokenBatch::new(Array3::zeros((0, 1, 1))).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(5);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(3), s.derive(3));
    }
}
