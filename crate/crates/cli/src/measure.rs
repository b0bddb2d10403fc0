use std::path::PathBuf;

use clap::Args;
use log::{info, warn};
use qst::io::StateDoc;
use qst::kernels::qmt;
use qst::objective::{lambda_from_frequencies, Shots};
use qst::povm::{
    full_pauli_ensemble, sample_pauli_strings, sample_pauli_strings_weighted, tetrahedral_ensemble, PauliSample,
    PovmEnsemble, DEFAULT_MAX_POVMS,
};
use qst::simulate::{simulate_frequencies, ShotPlan, Target};
use qst::states::{State, DEFAULT_DENSE_CAP};
use qst::Error;

use crate::util::{read_text, write_text, Family, NumPaulis};
use crate::Status;

#[derive(Args)]
pub struct MeasureArgs {
    /// State file written by `gen-state`.
    #[arg(long)]
    state: PathBuf,

    #[arg(long, value_enum, default_value_t = Family::Pauli)]
    povm: Family,

    /// `full`, `dfe`, `dfe(delta,epsilon)` or a number of strings.
    #[arg(long, default_value = "full")]
    num_paulis: NumPaulis,

    /// Shots per POVM, or `inf` for exact probabilities.
    #[arg(long, default_value = "inf")]
    shots: Shots,

    /// Overrides the depolarizing strength stored in the state file.
    #[arg(long)]
    depolarize: Option<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long)]
    out: PathBuf,
}

/// Strings weighted by squared expectations in `state`.
fn sample_strings(state: &State, budget: usize, seed: u64) -> qst::Result<PauliSample> {
    match state {
        State::Product(p) => sample_pauli_strings(p, budget, seed),
        State::Dense(rho) => {
            let w: Vec<f64> = qmt(rho.matrix())?.into_iter().map(|x| x * x).collect();
            sample_pauli_strings_weighted(rho.n(), &w, budget, seed)
        }
    }
}

fn ensemble(a: &MeasureArgs, state: &State) -> qst::Result<PovmEnsemble> {
    let n = state.n();
    match a.povm {
        Family::Tetrahedral => {
            if a.num_paulis != NumPaulis::Full {
                return Err(Error::Validation("--num-paulis applies to the pauli family only".into()));
            }
            tetrahedral_ensemble(n, DEFAULT_DENSE_CAP)
        }
        Family::Pauli => match a.num_paulis.budget()? {
            None => full_pauli_ensemble(n, DEFAULT_MAX_POVMS),
            Some(budget) => {
                let sample = sample_strings(state, budget, a.seed)?;
                if sample.truncated {
                    warn!(
                        "only {} strings carry weight; measuring all of them instead of {budget}",
                        sample.strings.len()
                    );
                }
                PovmEnsemble::pauli(n, sample.strings)
            }
        },
    }
}

pub fn run(a: MeasureArgs) -> anyhow::Result<Status> {
    let doc = StateDoc::from_json(&read_text(&a.state)?)?;
    let state = doc.to_state()?;
    let p = a.depolarize.or(doc.depolarizing).unwrap_or(0.0);
    let ens = ensemble(&a, &state)?;
    let m_tot = ens.m_tot();
    let num_povms = ens.num_povms();
    let target = Target::new(state, p)?;
    // Offset the shot stream so it is independent of the string sampler.
    let plan = ShotPlan {
        shots: a.shots,
        seed: a.seed.wrapping_add(1),
    };
    let table = simulate_frequencies(&target, &ens, &plan)?;
    let lambda = lambda_from_frequencies(&table)?;
    info!("lambda = {lambda}, m_tot = {m_tot} ({num_povms} POVMs, shots {})", a.shots);
    write_text(&a.out, &table.to_json()?)?;
    Ok(Status::Done)
}
