use std::path::PathBuf;

use clap::Args;
use log::info;
use qst::io::FactorDoc;
use qst::objective::{FrequencyTable, PenalizedObjective};
use qst::states::DEFAULT_DENSE_CAP;
use qst::Error;

use crate::util::{certificate, read_text, resolve_engine, write_text, CertChoice, EngineChoice};
use crate::Status;

#[derive(Args)]
pub struct CertifyArgs {
    /// Frequency table the factor was fitted to.
    #[arg(long)]
    data: PathBuf,

    /// Factor file written by `solve`.
    #[arg(long)]
    factor: PathBuf,

    #[arg(long, value_enum, default_value_t = CertChoice::Auto)]
    method: CertChoice,

    #[arg(long, value_enum, default_value_t = EngineChoice::Auto)]
    engine: EngineChoice,

    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,

    /// Output file (`-` for stdout).
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

pub fn run(a: CertifyArgs) -> anyhow::Result<Status> {
    let table = FrequencyTable::from_json(&read_text(&a.data)?)?;
    let n = table.n();
    let u = FactorDoc::from_json(&read_text(&a.factor)?)?.to_factor()?;
    if u.nrows() != 1 << n {
        return Err(Error::Validation(format!("factor has {} rows, data need {}", u.nrows(), 1 << n)).into());
    }
    let engine = resolve_engine(a.engine, table.ensemble().family(), n, a.dense_cap);
    let ctx = PenalizedObjective::new(table, engine, a.dense_cap)?;
    let cert = certificate(&u, &ctx, a.method)?;
    info!("bound {:.6e} ({}, min eigenvalue {:.6e})", cert.bound, cert.method, cert.min_eig);
    write_text(&a.out, &cert.to_json()?)?;
    Ok(Status::Done)
}
