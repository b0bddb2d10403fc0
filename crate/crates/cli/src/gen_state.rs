use std::path::PathBuf;

use clap::Args;
use log::info;
use qst::io::StateDoc;
use qst::states::{make_state, StateKind, DEFAULT_DENSE_CAP};
use qst::Error;

use crate::util::{parse_kind, write_text};
use crate::Status;

#[derive(Args)]
pub struct GenStateArgs {
    /// Number of qubits.
    #[arg(long)]
    n: usize,

    /// w, ghz, random-product or random-pure.
    #[arg(long, value_parser = parse_kind)]
    kind: StateKind,

    /// Depolarizing strength stored with the state and applied by `measure`.
    #[arg(long)]
    depolarize: Option<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Largest qubit count for dense states.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,

    #[arg(long)]
    out: PathBuf,
}

pub fn run(a: GenStateArgs) -> anyhow::Result<Status> {
    if let Some(p) = a.depolarize {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("depolarizing strength {p} outside [0, 1]")).into());
        }
    }
    let state = make_state(a.kind, a.n, a.seed, a.dense_cap)?;
    let doc = StateDoc::from_state(&state, &a.kind.to_string(), a.depolarize);
    write_text(&a.out, &doc.to_json()?)?;
    info!("wrote {} {}-qubit state to {}", a.kind, a.n, a.out.display());
    Ok(Status::Done)
}
