use std::path::PathBuf;

use clap::Args;
use qst::io::{read_trace_csv, EnsembleDoc, FactorDoc, StateDoc, TRACE_HEADER};
use qst::objective::FrequencyTable;
use qst::Error;
use serde_json::Value;

use crate::bench::BENCH_HEADER;
use crate::report::{CertificateDoc, SolveReport};
use crate::util::read_text;
use crate::Status;

#[derive(Args)]
pub struct ValidateArgs {
    /// Any file written by `qst`.
    file: PathBuf,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

fn check_bench(text: &str) -> anyhow::Result<usize> {
    let mut rows = 0;
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let ok = f.len() == 5
            && matches!(f[0], "lowmem" | "qmt")
            && f[1].parse::<usize>().is_ok()
            && f[2].parse::<u64>().is_ok()
            && f[3].parse::<usize>().is_ok()
            && f[4].parse::<f64>().is_ok_and(|s| s.is_finite() && s >= 0.0);
        if !ok {
            return Err(invalid(format!("bench line {}: '{line}'", i + 1)));
        }
        rows += 1;
    }
    Ok(rows)
}

/// Names the detected format and checks it; the description is printed.
fn check(text: &str) -> anyhow::Result<String> {
    let first = text.lines().next().unwrap_or("").trim_end();
    if first == TRACE_HEADER {
        let rows = read_trace_csv(text)?;
        return Ok(format!("trace with {} rows", rows.len()));
    }
    if first == BENCH_HEADER {
        return Ok(format!("bench table with {} rows", check_bench(text)?));
    }
    let v: Value = serde_json::from_str(text).map_err(|e| invalid(format!("neither a known CSV nor JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| invalid("top-level JSON value must be an object"))?;
    let has = |k: &str| obj.contains_key(k);
    if has("freqs") {
        let t = FrequencyTable::from_json(text)?;
        Ok(format!(
            "frequency table: n = {}, {} family, {} POVMs, shots {}",
            t.n(),
            t.ensemble().family(),
            t.ensemble().num_povms(),
            t.shots()
        ))
    } else if has("termination") {
        let r: SolveReport = serde_json::from_value(v).map_err(|e| invalid(format!("solve report: {e}")))?;
        r.check().map_err(invalid)?;
        Ok(format!("solve report: n = {}, rank {}, {}", r.n, r.rank, r.termination))
    } else if has("bound") {
        let c: CertificateDoc = serde_json::from_value(v).map_err(|e| invalid(format!("certificate: {e}")))?;
        c.check().map_err(invalid)?;
        Ok(format!("certificate: bound {:e} ({})", c.bound, c.method))
    } else if has("entries") {
        let u = FactorDoc::from_json(text)?.to_factor()?;
        Ok(format!("factor: {} x {}", u.nrows(), u.ncols()))
    } else if has("kind") {
        let s = StateDoc::from_json(text)?;
        s.to_state()?;
        Ok(format!("state: {} on {} qubits", s.kind, s.n))
    } else if has("family") {
        let e = EnsembleDoc::from_json(text)?.to_ensemble()?;
        Ok(format!("ensemble: n = {}, {} family, {} POVMs", e.n(), e.family(), e.num_povms()))
    } else {
        Err(invalid("unrecognized JSON document"))
    }
}

pub fn run(a: ValidateArgs) -> anyhow::Result<Status> {
    let text = read_text(&a.file)?;
    let what = check(&text)?;
    println!("{}: ok ({what})", a.file.display());
    Ok(Status::Done)
}
