//! UnitNorm Jacobian and gradient identities under parameter scaling.
//!
//! For `x = W v + b` followed by `x̃ = D^(k/2) x / ‖x‖`, the Jacobian is
//! `J = D^(k/2) (I / ‖x‖ - x xᵀ / ‖x‖³)`. Scaling `(W, b)` by `α > 0`
//! leaves `x̃` unchanged, divides the `W` and `b` gradients by `α`, and
//! leaves the gradient with respect to `v` unchanged.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::RngSeed;

pub const FD_REL_TOL: f64 = 1e-6;
pub const NULLSPACE_TOL: f64 = 1e-12;
pub const OUTPUT_INVARIANCE_TOL: f64 = 1e-12;
pub const SCALING_REL_TOL: f64 = 1e-10;

/// Affine map `x = W v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl AffineLayer {
    pub fn new(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return invalid(format!("W has {} rows but b has length {}", w.nrows(), b.len()));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return invalid("affine parameters must be finite");
        }
        Ok(AffineLayer { w, b })
    }

    pub fn forward(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.dot(&v) + &self.b
    }

    pub fn scaled(&self, alpha: f64) -> AffineLayer {
        AffineLayer {
            w: &self.w * alpha,
            b: &self.b * alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub grad_w: Array2<f64>,
    pub grad_b: Array1<f64>,
    pub grad_v: Array1<f64>,
}

fn l2(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x).sqrt()
}

fn scale(d: usize, k: f64) -> f64 {
    (d as f64).powf(k / 2.0)
}

/// `D^(k/2) x / ‖x‖` for a single vector.
pub fn unitnorm_forward(x: ArrayView1<'_, f64>, k: f64) -> Result<Array1<f64>> {
    let norm = l2(x);
    if !(norm > 0.0) {
        return invalid("UnitNorm of a zero vector");
    }
    Ok(x.mapv(|v| v * scale(x.len(), k) / norm))
}

pub fn unitnorm_jacobian(x: ArrayView1<'_, f64>, k: f64) -> Result<Array2<f64>> {
    let norm = l2(x);
    if !(norm > 0.0) {
        return invalid("UnitNorm Jacobian at a zero vector");
    }
    let d = x.len();
    let s = scale(d, k);
    let inv = 1.0 / norm;
    let inv3 = inv * inv * inv;
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        let diag = if i == j { inv } else { 0.0 };
        s * (diag - x[i] * x[j] * inv3)
    }))
}

/// Closed-form gradients of a loss with upstream gradient `∂L/∂x̃`
/// through `UnitNorm(W v + b)`.
pub fn backward_affine_unitnorm(
    layer: &AffineLayer,
    v: ArrayView1<'_, f64>,
    k: f64,
    upstream: ArrayView1<'_, f64>,
) -> Result<GradBundle> {
    if layer.w.ncols() != v.len() {
        return invalid(format!("W has {} columns but v has length {}", layer.w.ncols(), v.len()));
    }
    if upstream.len() != layer.b.len() {
        return invalid(format!("upstream has length {}, expected {}", upstream.len(), layer.b.len()));
    }
    let x = layer.forward(v);
    let jac = unitnorm_jacobian(x.view(), k)?;
    let grad_x = jac.t().dot(&upstream);
    let grad_w = Array2::from_shape_fn(layer.w.dim(), |(i, j)| grad_x[i] * v[j]);
    let grad_v = layer.w.t().dot(&grad_x);
    Ok(GradBundle {
        grad_w,
        grad_b: grad_x,
        grad_v,
    })
}

fn step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Central-difference Jacobian of [`unitnorm_forward`].
pub fn fd_jacobian(x: ArrayView1<'_, f64>, k: f64) -> Result<Array2<f64>> {
    let d = x.len();
    let mut out = Array2::zeros((d, d));
    let mut probe = x.to_owned();
    for j in 0..d {
        let h = step(x[j]);
        probe[j] = x[j] + h;
        let plus = unitnorm_forward(probe.view(), k)?;
        probe[j] = x[j] - h;
        let minus = unitnorm_forward(probe.view(), k)?;
        probe[j] = x[j];
        out.column_mut(j).assign(&((plus - minus) / (2.0 * h)));
    }
    Ok(out)
}

/// Central-difference gradients of `upstreamᵀ UnitNorm(W v + b)`.
pub fn fd_gradients(
    layer: &AffineLayer,
    v: ArrayView1<'_, f64>,
    k: f64,
    upstream: ArrayView1<'_, f64>,
) -> Result<GradBundle> {
    let loss = |l: &AffineLayer, v: ArrayView1<'_, f64>| -> Result<f64> {
        Ok(upstream.dot(&unitnorm_forward(l.forward(v).view(), k)?))
    };
    let mut probe = layer.clone();
    let mut grad_w = Array2::zeros(layer.w.dim());
    for ((i, j), g) in grad_w.indexed_iter_mut() {
        let orig = layer.w[[i, j]];
        let h = step(orig);
        probe.w[[i, j]] = orig + h;
        let plus = loss(&probe, v)?;
        probe.w[[i, j]] = orig - h;
        let minus = loss(&probe, v)?;
        probe.w[[i, j]] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    let mut grad_b = Array1::zeros(layer.b.len());
    for (i, g) in grad_b.iter_mut().enumerate() {
        let orig = layer.b[i];
        let h = step(orig);
        probe.b[i] = orig + h;
        let plus = loss(&probe, v)?;
        probe.b[i] = orig - h;
        let minus = loss(&probe, v)?;
        probe.b[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    let mut vp = v.to_owned();
    let mut grad_v = Array1::zeros(v.len());
    for (j, g) in grad_v.iter_mut().enumerate() {
        let h = step(v[j]);
        vp[j] = v[j] + h;
        let plus = loss(layer, vp.view())?;
        vp[j] = v[j] - h;
        let minus = loss(layer, vp.view())?;
        vp[j] = v[j];
        *g = (plus - minus) / (2.0 * h);
    }
    Ok(GradBundle { grad_w, grad_b, grad_v })
}

fn max_abs<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.fold(0.0, |m, v| m.max(v.abs()))
}

/// `max |a - b| / max |b|`, the norm-wise relative error of `a` against
/// reference `b`. Zero when both are zero.
pub fn rel_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64> + Clone) -> f64 {
    let denom = max_abs(b.clone().into_iter());
    let diff = a
        .into_iter()
        .zip(b)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCheck {
    pub output_invariant: bool,
    pub grads_scale_correctly: bool,
    pub max_output_diff: f64,
    pub grad_w_rel_err: f64,
    pub grad_b_rel_err: f64,
    pub grad_v_rel_err: f64,
}

/// Compares the layer with its `alpha`-scaled copy.
pub fn alpha_scaling_check(
    layer: &AffineLayer,
    v: ArrayView1<'_, f64>,
    k: f64,
    alpha: f64,
    upstream: ArrayView1<'_, f64>,
) -> Result<AlphaCheck> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return invalid(format!("alpha must be positive and finite, got {alpha}"));
    }
    let scaled = layer.scaled(alpha);
    let out = unitnorm_forward(layer.forward(v).view(), k)?;
    let out_scaled = unitnorm_forward(scaled.forward(v).view(), k)?;
    let max_output_diff = max_abs((&out - &out_scaled).iter());

    let base = backward_affine_unitnorm(layer, v, k, upstream)?;
    let sc = backward_affine_unitnorm(&scaled, v, k, upstream)?;
    let expect_w = &base.grad_w / alpha;
    let expect_b = &base.grad_b / alpha;
    let grad_w_rel_err = rel_error(sc.grad_w.iter(), expect_w.iter());
    let grad_b_rel_err = rel_error(sc.grad_b.iter(), expect_b.iter());
    let grad_v_rel_err = rel_error(sc.grad_v.iter(), base.grad_v.iter());

    Ok(AlphaCheck {
        output_invariant: max_output_diff < OUTPUT_INVARIANCE_TOL,
        grads_scale_correctly: grad_w_rel_err < SCALING_REL_TOL
            && grad_b_rel_err < SCALING_REL_TOL
            && grad_v_rel_err < SCALING_REL_TOL,
        max_output_diff,
        grad_w_rel_err,
        grad_b_rel_err,
        grad_v_rel_err,
    })
}

/// Outcome of one named check across all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub seed: RngSeed,
    pub k: f64,
    pub all_passed: bool,
    pub checks: Vec<CheckOutcome>,
}

/// Random instance for one trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub layer: AffineLayer,
    pub v: Array1<f64>,
    pub upstream: Array1<f64>,
    pub alpha: f64,
}

// `None` draws alpha log-uniformly from [0.1, 10)
const TRIAL_ALPHAS: [Option<f64>; 4] = [Some(2.0), Some(1e-3), Some(1e3), None];

/// Trial `index` drawn from sub-stream `index` of `seed`.
pub fn random_trial(seed: RngSeed, index: usize) -> Trial {
    let mut rng = seed.stream(index as u64);
    let d_out = rng.random_range(2..=16);
    let d_in = rng.random_range(1..=12);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let w = Array2::from_shape_vec((d_out, d_in), normal(d_out * d_in)).expect("shape matches");
    let b = Array1::from(normal(d_out));
    let v = Array1::from(normal(d_in));
    let upstream = Array1::from(normal(d_out));
    let alpha = TRIAL_ALPHAS[index % TRIAL_ALPHAS.len()].unwrap_or_else(|| 10f64.powf(rng.random_range(-1.0..1.0)));
    Trial {
        layer: AffineLayer { w, b },
        v,
        upstream,
        alpha,
    }
}

#[derive(Default)]
struct Worst(Vec<(&'static str, f64, f64)>);

impl Worst {
    fn record(&mut self, name: &'static str, err: f64, tol: f64) {
        match self.0.iter_mut().find(|(n, _, _)| *n == name) {
            Some(entry) => entry.1 = entry.1.max(err),
            None => self.0.push((name, err, tol)),
        }
    }
}

/// Runs every UnitNorm gradient check over `trials` random instances.
pub fn run_gradcheck(trials: usize, seed: RngSeed, k: f64) -> Result<GradcheckReport> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    if !k.is_finite() {
        return invalid(format!("k must be finite, got {k}"));
    }
    let mut worst = Worst::default();
    for t in 0..trials {
        let trial = random_trial(seed, t);
        let (layer, v, g) = (&trial.layer, trial.v.view(), trial.upstream.view());
        let x = layer.forward(v);

        let jac = unitnorm_jacobian(x.view(), k)?;
        let fd_jac = fd_jacobian(x.view(), k)?;
        worst.record("jacobian_vs_finite_difference", rel_error(jac.iter(), fd_jac.iter()), FD_REL_TOL);
        let jx = jac.dot(&x);
        worst.record("jacobian_null_space", max_abs(jx.iter()), NULLSPACE_TOL);
        worst.record("jacobian_symmetry", max_abs((&jac - &jac.t()).iter()), NULLSPACE_TOL);
        let g_l1: f64 = g.iter().map(|v| v.abs()).sum();
        worst.record("upstream_orthogonal_to_input", g.dot(&jx).abs() / g_l1.max(1.0), NULLSPACE_TOL);

        let an = backward_affine_unitnorm(layer, v, k, g)?;
        let fd = fd_gradients(layer, v, k, g)?;
        worst.record("grad_w_vs_finite_difference", rel_error(an.grad_w.iter(), fd.grad_w.iter()), FD_REL_TOL);
        worst.record("grad_b_vs_finite_difference", rel_error(an.grad_b.iter(), fd.grad_b.iter()), FD_REL_TOL);
        worst.record("grad_v_vs_finite_difference", rel_error(an.grad_v.iter(), fd.grad_v.iter()), FD_REL_TOL);

        let alpha = alpha_scaling_check(layer, v, k, trial.alpha, g)?;
        worst.record("output_alpha_invariance", alpha.max_output_diff, OUTPUT_INVARIANCE_TOL);
        worst.record("grad_w_scales_inverse_alpha", alpha.grad_w_rel_err, SCALING_REL_TOL);
        worst.record("grad_b_scales_inverse_alpha", alpha.grad_b_rel_err, SCALING_REL_TOL);
        worst.record("grad_v_alpha_invariance", alpha.grad_v_rel_err, SCALING_REL_TOL);
    }
    let checks: Vec<CheckOutcome> = worst
        .0
        .into_iter()
        .map(|(name, max_error, tolerance)| CheckOutcome {
            name: name.to_string(),
            passed: max_error < tolerance,
            max_error,
            tolerance,
        })
        .collect();
    Ok(GradcheckReport {
        trials,
        seed,
        k,
        all_passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jacobian_annihilates_input() {
        let x = array![3.0, 4.0];
        let j = unitnorm_jacobian(x.view(), 1.0).unwrap();
        let jx = j.dot(&x);
        assert!(jx.iter().all(|v| v.abs() < 1e-12));
        assert!(max_abs((&j - &j.t()).iter()) < 1e-12);
        assert!(unitnorm_jacobian(array![0.0, 0.0].view(), 1.0).is_err());
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let x = array![0.3, -1.2, 2.5, 0.7];
        for k in [0.0, 1.0, 1.5] {
            let an = unitnorm_jacobian(x.view(), k).unwrap();
            let fd = fd_jacobian(x.view(), k).unwrap();
            assert!(rel_error(an.iter(), fd.iter()) < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let t = random_trial(RngSeed(4), 0);
        let zero = Array1::zeros(t.upstream.len());
        let g = backward_affine_unitnorm(&t.layer, t.v.view(), 1.5, zero.view()).unwrap();
        assert!(g.grad_w.iter().chain(g.grad_b.iter()).chain(g.grad_v.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_difference() {
        for i in 0..5 {
            let t = random_trial(RngSeed(10), i);
            let an = backward_affine_unitnorm(&t.layer, t.v.view(), 1.5, t.upstream.view()).unwrap();
            let fd = fd_gradients(&t.layer, t.v.view(), 1.5, t.upstream.view()).unwrap();
            assert!(rel_error(an.grad_w.iter(), fd.grad_w.iter()) < 1e-6);
            assert!(rel_error(an.grad_b.iter(), fd.grad_b.iter()) < 1e-6);
            assert!(rel_error(an.grad_v.iter(), fd.grad_v.iter()) < 1e-6);
        }
    }

    #[test]
    fn radial_weight_perturbation_has_no_first_order_effect() {
        // moving W along grad_x-orthogonal radial direction x vᵀ / ‖v‖² changes x by x
        let t = random_trial(RngSeed(12), 1);
        let x = t.layer.forward(t.v.view());
        let g = backward_affine_unitnorm(&t.layer, t.v.view(), 1.5, t.upstream.view()).unwrap();
        let vv = t.v.dot(&t.v);
        let radial = Array2::from_shape_fn(t.layer.w.dim(), |(i, j)| x[i] * t.v[j] / vv);
        let directional: f64 = (&g.grad_w * &radial).sum();
        assert!(directional.abs() < 1e-12);
    }

    #[test]
    fn alpha_checks() {
        let t = random_trial(RngSeed(2), 0);
        for alpha in [1.0, 2.0, 1e-3, 1e3] {
            let c = alpha_scaling_check(&t.layer, t.v.view(), 1.5, alpha, t.upstream.view()).unwrap();
            assert!(c.output_invariant && c.grads_scale_correctly, "alpha={alpha}: {c:?}");
        }
        assert!(alpha_scaling_check(&t.layer, t.v.view(), 1.5, 0.0, t.upstream.view()).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(AffineLayer::new(Array2::zeros((2, 3)), Array1::zeros(3)).is_err());
        let t = random_trial(RngSeed(3), 0);
        let bad_v = Array1::zeros(t.v.len() + 1);
        assert!(backward_affine_unitnorm(&t.layer, bad_v.view(), 1.0, t.upstream.view()).is_err());
    }

    #[test]
    fn full_run_passes() {
        let r = run_gradcheck(20, RngSeed(1), 1.5).unwrap();
        assert!(r.all_passed, "{r:#?}");
        assert_eq!(r.checks.len(), 11);
    }
}
