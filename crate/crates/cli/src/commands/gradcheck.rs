use anyhow::{bail, Result};
use normlens::gradcheck::{run_gradcheck, GradcheckReport};
use normlens::RngSeed;
use serde::Serialize;

use crate::cli::GradcheckArgs;
use crate::output::{json, Format, Outcome};

#[derive(Serialize)]
struct Report<'a> {
    command: &'static str,
    #[serde(flatten)]
    report: &'a GradcheckReport,
}

pub fn run(args: &GradcheckArgs, format: Option<Format>) -> Result<Outcome> {
    if format == Some(Format::Csv) {
        bail!("gradcheck reports are JSON only");
    }
    let report = run_gradcheck(args.trials, RngSeed(args.seed), args.k)?;
    let body = json(&Report {
        command: "gradcheck",
        report: &report,
    })?;
    Ok(Outcome::new(body, report.all_passed))
}
