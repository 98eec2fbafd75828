//! Entropy lower bound of UnitNorm attention rows.
//!
//! With `d = 2 D^(k - 1/2)`, every attention row over `L` UnitNorm tokens
//! has entropy at least
//!
//! ```text
//! ELB(k; L, D) = log(L - 1 + e^d) - d e^d / (L - 1 + e^d)
//! ```
//!
//! Writing `a = (L - 1) e^(-d)` gives the overflow-free form
//! `ELB = log1p(a) + d a / (1 + a)`, used for every `d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest sequence length accepted by [`elb_bruteforce`].
pub const BRUTEFORCE_MAX_LEN: usize = 6;
/// Largest number of entropy evaluations [`elb_bruteforce`] will attempt.
pub const BRUTEFORCE_MAX_EVALS: u128 = 200_000_000;
/// Sorted tuples up to this count are enumerated without reduction.
const FULL_ENUMERATION_LIMIT: u128 = 20_000_000;

const K50_INITIAL_BRACKET: (f64, f64) = (-1.0, 3.0);
const K50_MAX_EXPANSIONS: usize = 60;

fn check_dims(l: usize, d_dim: usize) -> Result<()> {
    if l < 2 {
        return invalid(format!("sequence length must be >= 2, got {l}"));
    }
    if d_dim < 1 {
        return invalid("feature dimension must be >= 1");
    }
    Ok(())
}

/// `d = 2 D^(k - 1/2)`, the logit gap between self and antipodal tokens.
pub fn logit_gap(k: f64, d_dim: usize) -> f64 {
    2.0 * (d_dim as f64).powf(k - 0.5)
}

fn elb_from_gap(gap: f64, l: usize) -> f64 {
    let a = (l as f64 - 1.0) * (-gap).exp();
    a.ln_1p() + gap * a / (1.0 + a)
}

pub fn elb(k: f64, l: usize, d_dim: usize) -> Result<f64> {
    check_dims(l, d_dim)?;
    if !k.is_finite() {
        return invalid(format!("k must be finite, got {k}"));
    }
    Ok(elb_from_gap(logit_gap(k, d_dim), l))
}

/// `∂ELB/∂k = -d² a ln D / (1 + a)²`.
pub fn elb_dk(k: f64, l: usize, d_dim: usize) -> Result<f64> {
    check_dims(l, d_dim)?;
    if !k.is_finite() {
        return invalid(format!("k must be finite, got {k}"));
    }
    if d_dim == 1 {
        return Ok(0.0);
    }
    let gap = logit_gap(k, d_dim);
    let ln_a = (l as f64 - 1.0).ln() - gap;
    let a = ln_a.exp();
    let num = (2.0 * gap.ln() + ln_a).exp() * (d_dim as f64).ln();
    Ok(-num / ((1.0 + a) * (1.0 + a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbPoint {
    pub k: f64,
    pub l: usize,
    pub d_dim: usize,
    pub d_val: f64,
    pub elb: f64,
}

impl ElbPoint {
    pub const CSV_HEADER: [&'static str; 5] = ["k", "L", "D", "d", "elb"];
}

/// `steps` evenly spaced samples of ELB over `[k_min, k_max]`.
pub fn elb_curve(l: usize, d_dim: usize, k_min: f64, k_max: f64, steps: usize) -> Result<Vec<ElbPoint>> {
    check_dims(l, d_dim)?;
    if !(k_min < k_max) || !k_min.is_finite() || !k_max.is_finite() {
        return invalid(format!("need finite k_min < k_max, got [{k_min}, {k_max}]"));
    }
    if steps < 2 {
        return invalid("steps must be >= 2");
    }
    let span = k_max - k_min;
    Ok((0..steps)
        .into_par_iter()
        .map(|i| {
            let k = if i == steps - 1 {
                k_max
            } else {
                k_min + span * i as f64 / (steps - 1) as f64
            };
            let d_val = logit_gap(k, d_dim);
            ElbPoint {
                k,
                l,
                d_dim,
                d_val,
                elb: elb_from_gap(d_val, l),
            }
        })
        .collect())
}

/// Solves `ELB(k) = log(L) / 2` by bisection.
pub fn k50(l: usize, d_dim: usize, tol: f64) -> Result<f64> {
    k50_from_bracket(l, d_dim, tol, K50_INITIAL_BRACKET)
}

/// [`k50`] starting the bracket search from `start`.
pub fn k50_from_bracket(l: usize, d_dim: usize, tol: f64, start: (f64, f64)) -> Result<f64> {
    check_dims(l, d_dim)?;
    if d_dim < 2 {
        return Err(Error::NoSolution("ELB does not depend on k when D = 1".into()));
    }
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    let (mut lo, mut hi) = start;
    if !(lo < hi) {
        return invalid(format!("bracket must satisfy lo < hi, got [{lo}, {hi}]"));
    }
    let target = 0.5 * (l as f64).ln();
    let g = |k: f64| elb_from_gap(logit_gap(k, d_dim), l) - target;

    // g is strictly decreasing: need g(lo) > 0 > g(hi)
    let mut expansions = 0;
    while g(lo) <= 0.0 || g(hi) >= 0.0 {
        if expansions == K50_MAX_EXPANSIONS {
            return Err(Error::NoSolution(format!("no bracket for L={l}, D={d_dim}")));
        }
        let width = hi - lo;
        if g(lo) <= 0.0 {
            lo -= width;
        }
        if g(hi) >= 0.0 {
            hi += width;
        }
        expansions += 1;
    }

    loop {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol {
            return Ok(mid);
        }
        if mid <= lo || mid >= hi {
            return Err(Error::NoSolution(format!(
                "bisection stalled at k={mid} with residual {gm:e} > {tol:e}"
            )));
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct K50Point {
    pub l: usize,
    pub d_dim: usize,
    pub k50: f64,
}

/// [`k50`] over every `(L, D)` pair, row-major in `ls`.
pub fn k50_landscape(ls: &[usize], ds: &[usize], tol: f64) -> Result<Vec<K50Point>> {
    let pairs: Vec<(usize, usize)> = ls.iter().flat_map(|&l| ds.iter().map(move |&d| (l, d))).collect();
    pairs
        .into_par_iter()
        .map(|(l, d_dim)| Ok(K50Point { l, d_dim, k50: k50(l, d_dim, tol)? }))
        .collect()
}

/// Result of [`elb_bruteforce`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMinimum {
    pub entropy: f64,
    /// Context cosines `c_j` (anchor excluded) at the minimum found.
    pub minimizer: Vec<f64>,
    pub evaluations: u64,
}

fn binomial(n: u128, r: u128) -> u128 {
    let r = r.min(n - r.min(n));
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

struct Table {
    weight: Vec<f64>,
    weighted_logit: Vec<f64>,
    grid: usize,
}

struct Search<'a> {
    table: &'a Table,
    free: usize,
    reduce_last: bool,
}

impl Search<'_> {
    fn entropy(z: f64, f: f64) -> f64 {
        z.ln() - f / z
    }

    // Enumerates nondecreasing grid tuples for the first `free` coordinates.
    fn descend(&self, depth: usize, start: usize, z: f64, f: f64, idx: &mut Vec<usize>, best: &mut (f64, Vec<usize>, u64)) {
        let t = self.table;
        if depth == self.free {
            if self.reduce_last {
                for g in [0, t.grid - 1] {
                    let h = Self::entropy(z + t.weight[g], f + t.weighted_logit[g]);
                    best.2 += 1;
                    if h < best.0 {
                        idx.push(g);
                        *best = (h, idx.clone(), best.2);
                        idx.pop();
                    }
                }
            } else {
                best.2 += 1;
                let h = Self::entropy(z, f);
                if h < best.0 {
                    *best = (h, idx.clone(), best.2);
                }
            }
            return;
        }
        for g in start..t.grid {
            idx.push(g);
            self.descend(depth + 1, g, z + t.weight[g], f + t.weighted_logit[g], idx, best);
            idx.pop();
        }
    }
}

/// Grid-search oracle for the entropy lower bound.
///
/// Minimizes the entropy of `softmax(D^(k-1/2) · c)` where `c_0 = 1` is the
/// anchor's self-similarity and every context cosine `c_j` ranges over a
/// uniform `grid`-point lattice on `[-1, 1]`. Entropy is symmetric in the
/// context cosines, so only nondecreasing tuples are visited. When that is
/// still too many, the last context coordinate is restricted to the lattice
/// endpoints: entropy as a function of a single logit `t` has derivative
/// `(1 - p_t) p_t (m - t)` for a fixed weighted mean `m` of the others, so
/// it is quasi-concave in `t` and its minimum over an interval sits at an
/// endpoint.
pub fn elb_bruteforce(k: f64, l: usize, d_dim: usize, grid: usize) -> Result<GridMinimum> {
    grid_search(k, l, d_dim, grid, None)
}

fn grid_search(k: f64, l: usize, d_dim: usize, grid: usize, force_reduce: Option<bool>) -> Result<GridMinimum> {
    check_dims(l, d_dim)?;
    if l > BRUTEFORCE_MAX_LEN {
        return invalid(format!("brute force limited to L <= {BRUTEFORCE_MAX_LEN}, got {l}"));
    }
    if grid < 2 {
        return invalid("grid must have at least 2 points");
    }
    if !k.is_finite() {
        return invalid(format!("k must be finite, got {k}"));
    }
    let context = l - 1;
    let full = binomial((grid + context - 1) as u128, context as u128);
    let reduce_last = force_reduce.unwrap_or(full > FULL_ENUMERATION_LIMIT);
    let free = if reduce_last { context - 1 } else { context };
    let evals = if reduce_last {
        2 * binomial((grid + free).saturating_sub(1) as u128, free as u128)
    } else {
        full
    };
    if evals > BRUTEFORCE_MAX_EVALS {
        return invalid(format!("grid {grid} with L={l} needs {evals} evaluations"));
    }

    let scale = (d_dim as f64).powf(k - 0.5);
    let cos: Vec<f64> = (0..grid)
        .map(|g| {
            if g == grid - 1 {
                1.0
            } else {
                -1.0 + 2.0 * g as f64 / (grid - 1) as f64
            }
        })
        .collect();
    // logits shifted by the anchor logit `scale`, which is the maximum
    let shifted: Vec<f64> = cos.iter().map(|c| scale * (c - 1.0)).collect();
    let table = Table {
        weight: shifted.iter().map(|s| s.exp()).collect(),
        weighted_logit: shifted.iter().map(|s| s.exp() * s).collect(),
        grid,
    };
    let search = Search {
        table: &table,
        free,
        reduce_last,
    };
    let mut best = (f64::INFINITY, Vec::new(), 0u64);
    // anchor contributes weight 1 and shifted logit 0
    search.descend(0, 0, 1.0, 0.0, &mut Vec::with_capacity(context), &mut best);

    Ok(GridMinimum {
        entropy: best.0.max(0.0),
        minimizer: best.1.iter().map(|&g| cos[g]).collect(),
        evaluations: best.2,
    })
}

/// Entropy of the attention row of a UnitNorm anchor whose context tokens
/// have cosines `context` with it.
pub fn context_entropy(k: f64, d_dim: usize, context: &[f64]) -> Result<f64> {
    check_dims(context.len() + 1, d_dim)?;
    if let Some(c) = context.iter().find(|c| !(c.abs() <= 1.0)) {
        return invalid(format!("cosines must lie in [-1, 1], got {c}"));
    }
    let scale = (d_dim as f64).powf(k - 0.5);
    let (mut z, mut f) = (1.0, 0.0);
    for c in context {
        let s = scale * (c - 1.0);
        z += s.exp();
        f += s.exp() * s;
    }
    Ok(Search::entropy(z, f).max(0.0))
}

/// Absolute tolerance for matching the closed form against the grid.
pub const ELB_MATCH_TOL: f64 = 1e-6;

/// Closed-form ELB against the brute-force grid at one `(k, L, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbCheck {
    pub k: f64,
    pub l: usize,
    pub d_dim: usize,
    pub elb: f64,
    /// Grid objective with every context cosine at -1.
    pub at_minimizer: f64,
    pub minimizer_error: f64,
    pub matches: bool,
    pub grid_minimum: f64,
    pub grid_minimizer: Vec<f64>,
    /// Whether no grid point lies below the closed form.
    pub bound_holds: bool,
}

/// Runs [`ElbCheck`] over every combination of `ls`, `ks` and `ds`.
pub fn verify_elb(ls: &[usize], ks: &[f64], ds: &[usize], grid: usize) -> Result<Vec<ElbCheck>> {
    let mut out = Vec::new();
    for &l in ls {
        for &k in ks {
            for &d_dim in ds {
                let closed = elb(k, l, d_dim)?;
                let at_minimizer = context_entropy(k, d_dim, &vec![-1.0; l - 1])?;
                let min = elb_bruteforce(k, l, d_dim, grid)?;
                let err = (closed - at_minimizer).abs();
                out.push(ElbCheck {
                    k,
                    l,
                    d_dim,
                    elb: closed,
                    at_minimizer,
                    minimizer_error: err,
                    matches: err <= ELB_MATCH_TOL,
                    bound_holds: min.entropy >= closed - ELB_MATCH_TOL,
                    grid_minimum: min.entropy,
                    grid_minimizer: min.minimizer,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // log(1 + e^2) - 2 e^2 / (1 + e^2), evaluated term by term
    fn elb_l2_d1() -> f64 {
        let e2 = 2f64.exp();
        (1.0 + e2).ln() - 2.0 * e2 / (1.0 + e2)
    }

    #[test]
    fn elb_point_values() {
        for k in [-3.0, 0.0, 1.5] {
            assert_abs_diff_eq!(elb(k, 2, 1).unwrap(), 0.365_333_855_087_207_6, epsilon = 1e-12);
            assert_abs_diff_eq!(elb(k, 2, 1).unwrap(), elb_l2_d1(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(elb(-50.0, 1024, 512).unwrap(), 1024f64.ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(elb(3.0, 8, 512).unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn elb_matches_naive_form_where_it_is_safe() {
        for (k, l, d) in [(0.2, 5, 16), (0.7, 100, 64), (1.0, 3, 4)] {
            let gap = logit_gap(k, d);
            let s = l as f64 - 1.0 + gap.exp();
            let naive = s.ln() - gap * gap.exp() / s;
            assert_abs_diff_eq!(elb(k, l, d).unwrap(), naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn elb_stays_finite_for_huge_gap() {
        let v = elb(3.0, 1024, 512).unwrap();
        assert!(v.is_finite() && v >= 0.0);
        assert!(elb(0.0, 1, 4).is_err());
        assert!(elb(f64::NAN, 4, 4).is_err());
    }

    #[test]
    fn derivative_sign_and_fd() {
        assert_eq!(elb_dk(0.3, 10, 1).unwrap(), 0.0);
        for (k, l, d) in [(-0.5, 2, 2), (0.3, 16, 64), (0.8, 1024, 512), (0.6, 7, 300)] {
            let an = elb_dk(k, l, d).unwrap();
            assert!(an < 0.0);
            let h = 1e-6;
            let fd = (elb(k + h, l, d).unwrap() - elb(k - h, l, d).unwrap()) / (2.0 * h);
            assert!(((an - fd) / an).abs() < 1e-5, "k={k} L={l} D={d}: {an} vs {fd}");
        }
    }

    #[test]
    fn curve_properties() {
        // k = 1.2 keeps d = 2 * 512^0.7 well inside f64 range for e^-d
        let c = elb_curve(64, 512, -1.0, 1.2, 50).unwrap();
        assert_eq!(c.len(), 50);
        assert!(c.windows(2).all(|w| w[0].elb > w[1].elb));
        assert!(c.iter().all(|p| p.elb > 0.0 && p.elb < 64f64.ln()));
        let two = elb_curve(8, 4, 0.0, 1.0, 2).unwrap();
        assert_eq!(two[0].elb, elb(0.0, 8, 4).unwrap());
        assert_eq!(two[1].elb, elb(1.0, 8, 4).unwrap());
        assert!(elb_curve(8, 4, 1.0, 0.0, 5).is_err());
        assert!(elb_curve(8, 4, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn k50_defining_equation() {
        for (l, d) in [(64, 64), (1024, 512), (2, 2), (5000, 3)] {
            let k = k50(l, d, 1e-9).unwrap();
            let half = 0.5 * (l as f64).ln();
            assert!((elb(k, l, d).unwrap() - half).abs() <= 1e-9);
            assert!(elb(k - 1.0, l, d).unwrap() > half);
            assert!(elb(k + 1.0, l, d).unwrap() < half);
        }
        assert!(matches!(k50(10, 1, 1e-9), Err(Error::NoSolution(_))));
        assert!(k50(10, 4, 0.0).is_err());
    }

    #[test]
    fn k50_independent_of_starting_bracket() {
        let base = k50(256, 128, 1e-10).unwrap();
        for start in [(-20.0, -19.0), (5.0, 9.0), (0.0, 0.1), (-100.0, 100.0)] {
            let k = k50_from_bracket(256, 128, 1e-10, start).unwrap();
            // both satisfy |ELB - target| <= tol; the slope bounds their distance
            let slope = elb_dk(base, 256, 128).unwrap().abs();
            assert!((k - base).abs() <= 2e-10 / slope * 1.01, "{start:?}: {k} vs {base}");
        }
    }

    #[test]
    fn bruteforce_small_cases() {
        let m = elb_bruteforce(0.0, 2, 1, 2001).unwrap();
        assert_abs_diff_eq!(m.entropy, elb_l2_d1(), epsilon = 1e-6);
        assert_abs_diff_eq!(m.entropy, elb(0.0, 2, 1).unwrap(), epsilon = 1e-6);
        assert_eq!(m.minimizer, vec![-1.0]);
        assert_eq!(m.evaluations, 2001);

        let m = elb_bruteforce(0.5, 4, 4, 101).unwrap();
        assert_eq!(m.minimizer, vec![-1.0; 3]);
    }

    #[test]
    fn reduced_search_agrees_with_full_search() {
        for (k, l, d) in [(-1.0, 4, 4), (0.5, 4, 64), (1.0, 3, 4), (0.0, 5, 1), (0.2, 6, 8)] {
            let full = grid_search(k, l, d, 41, Some(false)).unwrap();
            let reduced = grid_search(k, l, d, 41, Some(true)).unwrap();
            assert!(reduced.evaluations < full.evaluations);
            assert_abs_diff_eq!(full.entropy, reduced.entropy, epsilon = 1e-14);
        }
        // L=4, grid 2001 switches to the reduced search
        let big = elb_bruteforce(0.0, 4, 4, 2001).unwrap();
        assert_eq!(big.evaluations, 2 * binomial(2002, 2) as u64);
    }

    #[test]
    fn bound_holds_except_for_small_gaps_at_four_tokens() {
        for l in [2, 3, 4] {
            for k in [-1.0, 0.0, 0.5, 1.0, 1.5] {
                for d in [1, 4, 64] {
                    let m = elb_bruteforce(k, l, d, 201).unwrap();
                    let bound = elb(k, l, d).unwrap();
                    let small_gap = l == 4 && logit_gap(k, d) <= 0.25;
                    if small_gap {
                        // two tokens at +e and two at -e beat the antipodal layout
                        assert!(m.entropy < bound - 1e-7, "k={k} L={l} D={d}");
                        assert_eq!(m.minimizer, vec![-1.0, -1.0, 1.0]);
                    } else {
                        assert!(m.entropy >= bound - 1e-9, "k={k} L={l} D={d}");
                    }
                }
            }
        }
    }

    #[test]
    fn bruteforce_guards() {
        assert!(elb_bruteforce(0.0, 7, 4, 101).is_err());
        assert!(elb_bruteforce(0.0, 6, 4, 100_000).is_err());
        assert!(elb_bruteforce(0.0, 1, 4, 101).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(2003, 3), 1_337_337_001);
        assert_eq!(binomial(7, 0), 1);
    }
    #[test]
    fn context_entropy_at_antipodes_is_the_bound() {
        for (k, l, d) in [(-1.0, 2, 4), (0.0, 3, 64), (1.0, 4, 4), (1.5, 3, 1)] {
            let h = context_entropy(k, d, &vec![-1.0; l - 1]).unwrap();
            assert_abs_diff_eq!(h, elb(k, l, d).unwrap(), epsilon = 1e-12);
        }
        // identical tokens give the uniform row
        assert_abs_diff_eq!(context_entropy(1.0, 8, &[1.0; 3]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert!(context_entropy(1.0, 8, &[1.5]).is_err());
    }

    #[test]
    fn verify_reports_counterexample() {
        let checks = verify_elb(&[4], &[-1.0], &[4], 201).unwrap();
        assert!(checks[0].matches);
        assert!(!checks[0].bound_holds);
        assert!(checks[0].grid_minimum < checks[0].elb);
    }
}
