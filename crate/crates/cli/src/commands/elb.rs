use anyhow::{bail, Result};
use normlens::elb::{elb, elb_curve, k50, k50_landscape, verify_elb, ElbCheck, ElbPoint, ELB_MATCH_TOL};
use serde::Serialize;

use crate::cli::{CurveArgs, ElbCommand, K50Args, LandscapeArgs, VerifyArgs};
use crate::output::{csv_table, json, num, Format, Outcome};

/// Dimension used for the large-|k| limit checks.
const LIMIT_DIM: usize = 512;
const LIMIT_LOW_K: f64 = -50.0;
const LIMIT_HIGH_K: f64 = 5.0;

#[derive(Serialize)]
struct CurveReport<'a> {
    command: &'static str,
    passed: bool,
    points: &'a [ElbPoint],
}

#[derive(Serialize)]
struct K50Report {
    command: &'static str,
    passed: bool,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "D")]
    d: usize,
    tol: f64,
    k50: f64,
    elb_at_k50: f64,
    target: f64,
    residual: f64,
}

#[derive(Serialize)]
struct LandscapeRow {
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "D")]
    d: usize,
    k50: f64,
    residual: f64,
}

#[derive(Serialize)]
struct LandscapeReport<'a> {
    command: &'static str,
    passed: bool,
    tol: f64,
    rows: &'a [LandscapeRow],
}

#[derive(Serialize)]
struct LimitCheck {
    k: f64,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "D")]
    d: usize,
    elb: f64,
    target: f64,
    error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    command: &'static str,
    passed: bool,
    grid: usize,
    tolerance: f64,
    /// Grid points strictly below the closed form, reported but not asserted.
    bound_violations: usize,
    checks: Vec<ElbCheck>,
    limits: Vec<LimitCheck>,
}

pub fn run(cmd: &ElbCommand, format: Option<Format>) -> Result<Outcome> {
    match cmd {
        ElbCommand::Curve(a) => curve(a, format),
        ElbCommand::K50(a) => solve(a, format),
        ElbCommand::Landscape(a) => landscape(a, format),
        ElbCommand::Verify(a) => verify(a, format),
    }
}

fn json_only(format: Option<Format>, what: &str) -> Result<()> {
    if format == Some(Format::Csv) {
        bail!("{what} reports are JSON only");
    }
    Ok(())
}

fn curve(a: &CurveArgs, format: Option<Format>) -> Result<Outcome> {
    let points = elb_curve(a.seq_len, a.dim, a.k_min, a.k_max, a.steps)?;
    let log_l = (a.seq_len as f64).ln();
    let passed = points.iter().all(|p| (0.0..=log_l).contains(&p.elb))
        && points.windows(2).all(|w| w[1].elb <= w[0].elb);
    let body = match format.unwrap_or(Format::Csv) {
        Format::Csv => csv_table(
            &format!("normlens elb curve L={} D={} passed={passed}", a.seq_len, a.dim),
            &ElbPoint::CSV_HEADER,
            points
                .iter()
                .map(|p| vec![num(p.k), p.l.to_string(), p.d_dim.to_string(), num(p.d_val), num(p.elb)]),
        )?,
        Format::Json => json(&CurveReport {
            command: "elb curve",
            passed,
            points: &points,
        })?,
    };
    Ok(Outcome::new(body, passed))
}

fn residual(k: f64, l: usize, d: usize) -> Result<(f64, f64, f64)> {
    let value = elb(k, l, d)?;
    let target = 0.5 * (l as f64).ln();
    Ok((value, target, (value - target).abs()))
}

fn solve(a: &K50Args, format: Option<Format>) -> Result<Outcome> {
    json_only(format, "elb k50")?;
    let k = k50(a.seq_len, a.dim, a.tol)?;
    let (value, target, res) = residual(k, a.seq_len, a.dim)?;
    let passed = res <= a.tol;
    let body = json(&K50Report {
        command: "elb k50",
        passed,
        l: a.seq_len,
        d: a.dim,
        tol: a.tol,
        k50: k,
        elb_at_k50: value,
        target,
        residual: res,
    })?;
    Ok(Outcome::new(body, passed))
}

fn landscape(a: &LandscapeArgs, format: Option<Format>) -> Result<Outcome> {
    let rows = k50_landscape(&a.seq_lens, &a.dims, a.tol)?
        .into_iter()
        .map(|p| {
            Ok(LandscapeRow {
                l: p.l,
                d: p.d_dim,
                k50: p.k50,
                residual: residual(p.k50, p.l, p.d_dim)?.2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = rows.iter().all(|r| r.residual <= a.tol);
    let body = match format.unwrap_or(Format::Csv) {
        Format::Csv => csv_table(
            &format!("normlens elb landscape tol={} passed={passed}", num(a.tol)),
            &["L", "D", "k50", "residual"],
            rows.iter()
                .map(|r| vec![r.l.to_string(), r.d.to_string(), num(r.k50), num(r.residual)]),
        )?,
        Format::Json => json(&LandscapeReport {
            command: "elb landscape",
            passed,
            tol: a.tol,
            rows: &rows,
        })?,
    };
    Ok(Outcome::new(body, passed))
}

fn limit(k: f64, l: usize, target: f64) -> Result<LimitCheck> {
    let value = elb(k, l, LIMIT_DIM)?;
    let error = (value - target).abs();
    Ok(LimitCheck {
        k,
        l,
        d: LIMIT_DIM,
        elb: value,
        target,
        error,
        passed: error <= ELB_MATCH_TOL,
    })
}

fn verify(a: &VerifyArgs, format: Option<Format>) -> Result<Outcome> {
    json_only(format, "elb verify")?;
    let checks = verify_elb(&a.seq_lens, &a.ks, &a.dims, a.grid)?;
    let mut limits = Vec::new();
    for &l in &a.seq_lens {
        limits.push(limit(LIMIT_LOW_K, l, (l as f64).ln())?);
        limits.push(limit(LIMIT_HIGH_K, l, 0.0)?);
    }
    let passed = checks.iter().all(|c| c.matches) && limits.iter().all(|c| c.passed);
    let body = json(&VerifyReport {
        command: "elb verify",
        passed,
        grid: a.grid,
        tolerance: ELB_MATCH_TOL,
        bound_violations: checks.iter().filter(|c| !c.bound_holds).count(),
        checks,
        limits,
    })?;
    Ok(Outcome::new(body, passed))
}
