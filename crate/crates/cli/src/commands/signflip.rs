use anyhow::{bail, Result};
use normlens::signflip::{
    corollary_condition, corollary_sweep, corollary_threshold, dot_mean, dot_variance, estimate_signflip,
    theorem_sides, ConditionSides, SweepRow, FLIP_PROBABILITY_BOUND,
};
use normlens::{GaussianTokenModel, RngSeed, SignFlipEstimate, Standardization};
use serde::Serialize;

use crate::cli::{EstimateArgs, ModelArgs, SignflipArgs, SignflipCommand, SweepArgs};
use crate::output::{csv_table, json, num, Format, Outcome};

/// Standard errors of slack allowed on the Monte Carlo side of the bound.
pub const Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, Serialize)]
struct ModelSummary {
    #[serde(rename = "D")]
    d: usize,
    mu_x: f64,
    sigma2_x: f64,
    mu_y: f64,
    sigma2_y: f64,
}

#[derive(Serialize)]
struct Conditions {
    theorem: ConditionSides,
    theorem_holds: bool,
    corollary_threshold: f64,
    corollary_holds: bool,
    dot_mean: f64,
    dot_variance: f64,
}

#[derive(Serialize)]
struct CheckReport {
    command: &'static str,
    passed: bool,
    model: ModelSummary,
    conditions: Conditions,
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    seed: u64,
    passed: bool,
    model: ModelSummary,
    conditions: Conditions,
    estimate: SignFlipEstimate,
    bound: f64,
    z: f64,
    upper: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    command: &'static str,
    seed: u64,
    samples: usize,
    passed: bool,
    bound: f64,
    z: f64,
    rows: &'a [SweepRow],
}

pub fn run(args: &SignflipArgs, format: Option<Format>) -> Result<Outcome> {
    match &args.action {
        None => estimate(&args.estimate, format),
        Some(SignflipCommand::Estimate(a)) => estimate(a, format),
        Some(SignflipCommand::Check(m)) => check(m, format),
        Some(SignflipCommand::Sweep(s)) => sweep(s, format),
    }
}

fn build(m: &ModelArgs) -> Result<(ModelSummary, GaussianTokenModel)> {
    if m.dim == 0 {
        bail!("--D must be positive");
    }
    let mu_x = m.mu.unwrap_or_else(|| corollary_threshold(m.dim) * m.sigma2.sqrt());
    let s = ModelSummary {
        d: m.dim,
        mu_x,
        sigma2_x: m.sigma2,
        mu_y: m.mu_y.unwrap_or(mu_x),
        sigma2_y: m.sigma2_y.unwrap_or(m.sigma2),
    };
    let model = GaussianTokenModel::new(
        vec![s.mu_x; s.d],
        vec![s.sigma2_x; s.d],
        vec![s.mu_y; s.d],
        vec![s.sigma2_y; s.d],
    )?;
    Ok((s, model))
}

fn conditions(s: &ModelSummary, model: &GaussianTokenModel) -> Result<Conditions> {
    let sides = theorem_sides(model);
    Ok(Conditions {
        theorem_holds: sides.holds(),
        theorem: sides,
        corollary_threshold: corollary_threshold(s.d),
        corollary_holds: corollary_condition(s.mu_x, s.sigma2_x.sqrt(), s.mu_y, s.sigma2_y.sqrt(), s.d)?,
        dot_mean: dot_mean(model),
        dot_variance: dot_variance(model),
    })
}

fn json_only(format: Option<Format>, what: &str) -> Result<()> {
    if format == Some(Format::Csv) {
        bail!("{what} reports are JSON only");
    }
    Ok(())
}

fn check(m: &ModelArgs, format: Option<Format>) -> Result<Outcome> {
    json_only(format, "signflip check")?;
    let (s, model) = build(m)?;
    let c = conditions(&s, &model)?;
    // the corollary is a sufficient condition for the theorem
    let passed = !c.corollary_holds || c.theorem_holds;
    let body = json(&CheckReport {
        command: "signflip check",
        passed,
        model: s,
        conditions: c,
    })?;
    Ok(Outcome::new(body, passed))
}

fn estimate(a: &EstimateArgs, format: Option<Format>) -> Result<Outcome> {
    json_only(format, "signflip estimate")?;
    let mode = match a.mode.as_str() {
        "model" => Standardization::ModelParameters,
        "token" => Standardization::TokenStatistics,
        other => bail!("unknown standardization mode '{other}', expected model or token"),
    };
    let (s, model) = build(&a.model)?;
    let c = conditions(&s, &model)?;
    let est = estimate_signflip(&model, a.samples, RngSeed(a.seed), mode)?;
    let upper = est.upper(Z);
    let passed = !c.theorem_holds || upper >= FLIP_PROBABILITY_BOUND;
    let body = json(&EstimateReport {
        command: "signflip estimate",
        seed: a.seed,
        passed,
        model: s,
        conditions: c,
        estimate: est,
        bound: FLIP_PROBABILITY_BOUND,
        z: Z,
        upper,
    })?;
    Ok(Outcome::new(body, passed))
}

fn sweep(a: &SweepArgs, format: Option<Format>) -> Result<Outcome> {
    let rows = corollary_sweep(&a.dims, a.samples, RngSeed(a.seed))?;
    let passed = rows
        .iter()
        .all(|r| !r.condition_holds || r.p_hat + Z * r.std_err >= FLIP_PROBABILITY_BOUND);
    let body = match format.unwrap_or(Format::Csv) {
        Format::Csv => csv_table(
            &format!(
                "normlens signflip sweep seed={} samples={} passed={passed}",
                a.seed, a.samples
            ),
            &SweepRow::CSV_HEADER,
            rows.iter().map(|r| {
                vec![
                    r.d.to_string(),
                    num(r.ratio),
                    r.condition_holds.to_string(),
                    num(r.p_hat),
                    num(r.std_err),
                ]
            }),
        )?,
        Format::Json => json(&SweepReport {
            command: "signflip sweep",
            seed: a.seed,
            samples: a.samples,
            passed,
            bound: FLIP_PROBABILITY_BOUND,
            z: Z,
            rows: &rows,
        })?,
    };
    Ok(Outcome::new(body, passed))
}
