//! Shared fixtures for the benchmarks.

use normlens::{gaussian_batch, RngSeed, TokenBatch};

/// Gaussian tokens with every feature at mean `mu` and unit variance.
pub fn fixture_batch(n: usize, l: usize, d: usize, mu: f64) -> TokenBatch {
    gaussian_batch(n, l, &vec![mu; d], &vec![1.0; d], RngSeed(1)).expect("valid fixture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        assert_eq!(fixture_batch(2, 3, 4, 0.5).shape(), (2, 3, 4));
    }
}
