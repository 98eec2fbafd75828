use anyhow::{bail, Result};
use normlens::attention::MetricReport;
use normlens::study::{run_shift_study, StudyConfig, StudySource, StudySummary};
use normlens::signflip::corollary_threshold;
use normlens::{MetricRow, RngSeed};
use serde::Serialize;

use super::{broadcast, norm_config};
use crate::cli::{ShiftCommand, ShiftStudyArgs};
use crate::output::{csv_table, json, num, write_file, Format, Outcome};

#[derive(Serialize)]
struct StudyReport<'a> {
    command: &'static str,
    passed: bool,
    #[serde(flatten)]
    summary: &'a StudySummary,
}

pub fn run(cmd: &ShiftCommand, format: Option<Format>) -> Result<Outcome> {
    match cmd {
        ShiftCommand::Study(args) => study(args, format),
    }
}

fn source(args: &ShiftStudyArgs) -> Result<StudySource> {
    if let Some(pool) = args.input.load(args.dim)? {
        return Ok(StudySource::Pool(pool));
    }
    let d = args.dim;
    if d == 0 {
        bail!("--D must be positive");
    }
    let sigma2 = broadcast("sigma2", &args.sigma2, d)?;
    let mu = if args.mu.is_empty() {
        let t = corollary_threshold(d);
        sigma2.iter().map(|v| t * v.sqrt()).collect()
    } else {
        broadcast("mu", &args.mu, d)?
    };
    Ok(StudySource::Synthetic { mu, sigma2 })
}

/// Metric values that every report must respect.
fn report_is_sane(r: &MetricReport) -> bool {
    let log_l = (r.shape[1] as f64).ln() + 1e-9;
    r.rows.iter().all(|m: &MetricRow| {
        (0.0..=1.0).contains(&m.chebyshev)
            && (0.0..=1.0 + 1e-12).contains(&m.cosine)
            && m.kl >= 0.0
            && (0.0..=log_l).contains(&m.entropy_original)
            && (0.0..=log_l).contains(&m.entropy_normalized)
    })
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect::<String>()
        .trim_end_matches('_')
        .to_string()
}

fn report_csv(r: &MetricReport, seed: RngSeed, set: usize) -> Result<String> {
    let comment = format!(
        "normlens shift study method={} set={set} seed={} shape={}x{}x{}",
        r.config.label(),
        seed.0,
        r.shape[0],
        r.shape[1],
        r.shape[2]
    );
    csv_table(
        &comment,
        &MetricRow::CSV_HEADER,
        r.rows.iter().map(|m| {
            vec![
                m.n.to_string(),
                m.i.to_string(),
                num(m.chebyshev),
                num(m.cosine),
                num(m.kl),
                num(m.entropy_original),
                num(m.entropy_normalized),
            ]
        }),
    )
}

fn study(args: &ShiftStudyArgs, format: Option<Format>) -> Result<Outcome> {
    let methods = args
        .methods
        .iter()
        .map(|m| norm_config(m, args.k, args.eps))
        .collect::<Result<Vec<_>>>()?;
    let cfg = StudyConfig {
        methods,
        sets: args.sets,
        batch: args.batch,
        seq_len: args.seq_len,
        seed: RngSeed(args.seed),
    };
    let result = run_shift_study(&source(args)?, &cfg)?;
    let passed = result.reports.iter().flatten().all(report_is_sane);

    if let Some(dir) = &args.report_dir {
        let format = format.unwrap_or(Format::Json);
        for reports in &result.reports {
            for (s, r) in reports.iter().enumerate() {
                let stem = format!("{}_set{s:02}", file_stem(&r.config.label()));
                let set_seed = result.summary.set_seeds[s];
                match format {
                    Format::Json => write_file(&dir.join(format!("{stem}.json")), &json(r)?)?,
                    Format::Csv => write_file(&dir.join(format!("{stem}.csv")), &report_csv(r, set_seed, s)?)?,
                }
            }
        }
    }

    let body = json(&StudyReport {
        command: "shift study",
        passed,
        summary: &result.summary,
    })?;
    Ok(Outcome::new(body, passed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(file_stem("unit_norm(k=1.5)"), "unit_norm_k_1.5");
        assert_eq!(file_stem("rms_norm"), "rms_norm");
    }
}
