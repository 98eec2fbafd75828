use anyhow::{bail, Result};
use normlens::{normalize, NormConfig, TokenBatch};
use serde::Serialize;

use crate::cli::{NormApplyArgs, NormCommand};
use crate::output::{csv_table, json, num, Format, Outcome};

#[derive(Serialize)]
struct NormReport<'a> {
    command: &'static str,
    config: &'a NormConfig,
    shape: [usize; 3],
    tokens: Vec<Vec<f64>>,
}

pub fn run(cmd: &NormCommand, format: Option<Format>) -> Result<Outcome> {
    match cmd {
        NormCommand::Apply(args) => apply(args, format),
    }
}

fn apply(args: &NormApplyArgs, format: Option<Format>) -> Result<Outcome> {
    let cfg = args.norm.config()?;
    let Some(pool) = args.input.load(args.dim)? else {
        bail!("norm apply needs --input");
    };
    let tokens = pool.seq_len();
    let seq_len = args.seq_len.unwrap_or(tokens);
    if seq_len == 0 || tokens % seq_len != 0 {
        bail!("{tokens} tokens do not split into sequences of length {seq_len}");
    }
    let x = TokenBatch::from_vec(tokens / seq_len, seq_len, args.dim, pool.into_data().into_raw_vec_and_offset().0)?;
    let y = normalize(&x, &cfg)?;
    let (n, l, d) = y.shape();
    let rows = y.data().rows().into_iter().map(|r| r.to_vec());

    let body = match format.unwrap_or(Format::Csv) {
        Format::Csv => csv_table(
            &format!("normlens norm apply method={} N={n} L={l} D={d}", cfg.label()),
            &[],
            rows.map(|r| r.into_iter().map(num).collect()),
        )?,
        Format::Json => json(&NormReport {
            command: "norm apply",
            config: &cfg,
            shape: [n, l, d],
            tokens: rows.collect(),
        })?,
    };
    Ok(Outcome::new(body, true))
}
