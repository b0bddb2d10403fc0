//! File formats for states, ensembles and solver traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::povm::{tetrahedral_ensemble, PovmEnsemble, PovmFamily};
use crate::solvers::TraceRow;
use crate::states::{DensityMatrix, ProductState, State, DEFAULT_DENSE_CAP};

/// `{"n", "kind", "depolarizing"?, "dense" | "factors"}`; matrices are
/// row-major lists of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDoc {
    pub n: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depolarizing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<Vec<[f64; 2]>>>,
}

fn row_major(m: &CMatrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

fn from_row_major(d: usize, v: &[[f64; 2]]) -> Result<CMatrix> {
    if v.len() != d * d {
        return Err(Error::Validation(format!("expected {} entries, got {}", d * d, v.len())));
    }
    Ok(CMatrix::from_fn(d, d, |i, j| C64::new(v[i * d + j][0], v[i * d + j][1])))
}

impl StateDoc {
    pub fn from_state(state: &State, kind: &str, depolarizing: Option<f64>) -> Self {
        match state {
            State::Dense(r) => StateDoc {
                n: r.n(),
                kind: kind.to_string(),
                depolarizing,
                dense: Some(row_major(r.matrix())),
                factors: None,
            },
            State::Product(p) => StateDoc {
                n: p.n(),
                kind: kind.to_string(),
                depolarizing,
                dense: None,
                factors: Some(p.factors().iter().map(|f| row_major(f.matrix())).collect()),
            },
        }
    }

    pub fn to_state(&self) -> Result<State> {
        let validation = |e: Error| match e {
            Error::Domain(m) => Error::Validation(m),
            other => other,
        };
        match (&self.dense, &self.factors) {
            (Some(d), None) => {
                if self.n == 0 || self.n > DEFAULT_DENSE_CAP {
                    return Err(Error::Capacity {
                        what: format!("{}-qubit dense state", self.n),
                        limit: format!("{DEFAULT_DENSE_CAP} qubits"),
                    });
                }
                let m = from_row_major(1 << self.n, d)?;
                Ok(State::Dense(DensityMatrix::new(m).map_err(validation)?))
            }
            (None, Some(fs)) => {
                if fs.len() != self.n {
                    return Err(Error::Validation(format!("{} factors for n = {}", fs.len(), self.n)));
                }
                let factors = fs
                    .iter()
                    .map(|f| DensityMatrix::new(from_row_major(2, f)?).map_err(validation))
                    .collect::<Result<Vec<_>>>()?;
                Ok(State::Product(ProductState::new(factors).map_err(validation)?))
            }
            _ => Err(Error::Validation("state needs exactly one of 'dense' or 'factors'".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("state file: {e}")))
    }
}

/// `{"family": "pauli", "n", "indices"}` or `{"family": "tetrahedral", "n"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDoc {
    pub family: PovmFamily,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<u64>>,
}

impl EnsembleDoc {
    pub fn from_ensemble(e: &PovmEnsemble) -> Self {
        Self {
            family: e.family(),
            n: e.n(),
            indices: (e.family() == PovmFamily::Pauli).then(|| e.indices()),
        }
    }

    pub fn to_ensemble(&self) -> Result<PovmEnsemble> {
        let r = match (self.family, &self.indices) {
            (PovmFamily::Pauli, Some(idx)) => PovmEnsemble::pauli_from_indices(self.n, idx),
            (PovmFamily::Tetrahedral, None) => tetrahedral_ensemble(self.n, DEFAULT_DENSE_CAP),
            _ => return Err(Error::Validation("indices are required for pauli and forbidden for tetrahedral".into())),
        };
        r.map_err(|e| match e {
            Error::Domain(m) => Error::Validation(m),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("ensemble file: {e}")))
    }
}

/// `{"n", "rank", "entries"}` with the `2^n x rank` factor as row-major
/// `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDoc {
    pub n: usize,
    pub rank: usize,
    pub entries: Vec<[f64; 2]>,
}

impl FactorDoc {
    pub fn from_factor(u: &CMatrix) -> Result<Self> {
        let n = crate::states::qubits_for_dim(u.nrows())?;
        let mut entries = Vec::with_capacity(u.len());
        for i in 0..u.nrows() {
            for j in 0..u.ncols() {
                entries.push([u[(i, j)].re, u[(i, j)].im]);
            }
        }
        Ok(Self { n, rank: u.ncols(), entries })
    }

    pub fn to_factor(&self) -> Result<CMatrix> {
        if self.n == 0 || self.n > 30 || self.rank == 0 {
            return Err(Error::Validation(format!("bad factor shape n = {}, rank = {}", self.n, self.rank)));
        }
        let d = 1usize << self.n;
        if self.entries.len() != d * self.rank {
            return Err(Error::Validation(format!(
                "expected {} entries, got {}",
                d * self.rank,
                self.entries.len()
            )));
        }
        if self.entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("factor has non-finite entries".into()));
        }
        let r = self.rank;
        Ok(CMatrix::from_fn(d, r, |i, j| C64::new(self.entries[i * r + j][0], self.entries[i * r + j][1])))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("factor file: {e}")))
    }
}

pub const TRACE_HEADER: &str = "iter,seconds,objective,grad_norm,bound";

/// Trace CSV; `bound` is empty where no certificate was computed. With
/// `with_time = false` the seconds column is written as 0 so repeated runs
/// compare byte for byte.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], with_time: bool, mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        let secs = if with_time { r.seconds } else { 0.0 };
        let bound = r.bound.map(|b| format!("{b:e}")).unwrap_or_default();
        writeln!(w, "{},{:.6},{:e},{:e},{}", r.iter, secs, r.objective, r.grad_norm, bound)?;
    }
    Ok(())
}

/// Parse a trace CSV written by [`write_trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Validation("trace CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Validation(format!("trace CSV row {}: '{line}'", i + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TraceRow {
                iter: cols[0].parse().map_err(|_| bad())?,
                seconds: num(cols[1])?,
                objective: num(cols[2])?,
                grad_norm: num(cols[3])?,
                bound: if cols[4].is_empty() { None } else { Some(num(cols[4])?) },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, StateKind};

    #[test]
    fn state_round_trip() {
        for kind in [StateKind::W, StateKind::RandomProduct] {
            let s = make_state(kind, 2, 4, 14).unwrap();
            let doc = StateDoc::from_state(&s, &kind.to_string(), Some(0.1));
            let back = StateDoc::from_json(&doc.to_json().unwrap()).unwrap();
            assert_eq!(back, doc);
            let s2 = back.to_state().unwrap();
            match (s, s2) {
                (State::Dense(a), State::Dense(b)) => assert_eq!(a.matrix(), b.matrix()),
                (State::Product(a), State::Product(b)) => assert_eq!(a.factors(), b.factors()),
                _ => panic!("representation changed"),
            }
        }
    }

    #[test]
    fn state_rejects_bad_docs() {
        let doc = StateDoc {
            n: 1,
            kind: "custom".into(),
            depolarizing: None,
            dense: Some(vec![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
            factors: None,
        };
        assert!(matches!(doc.to_state(), Err(Error::Validation(_))));
        assert!(StateDoc::from_json("{\"n\":1,\"kind\":\"w\",\"extra\":1}").is_err());
    }

    #[test]
    fn ensemble_round_trip() {
        let e = PovmEnsemble::pauli_from_indices(2, &[1, 5, 15]).unwrap();
        let doc = EnsembleDoc::from_ensemble(&e);
        assert_eq!(doc.to_json().unwrap(), "{\"family\":\"pauli\",\"n\":2,\"indices\":[1,5,15]}\n");
        assert_eq!(EnsembleDoc::from_json(&doc.to_json().unwrap()).unwrap().to_ensemble().unwrap(), e);
        let t = EnsembleDoc::from_json("{\"family\":\"tetrahedral\",\"n\":3}").unwrap();
        assert_eq!(t.to_ensemble().unwrap().m_tot(), 64);
    }

    #[test]
    fn factor_round_trip() {
        let u = crate::solvers::init_factor(3, 2, 4).unwrap();
        let doc = FactorDoc::from_factor(&u).unwrap();
        let back = FactorDoc::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back.to_factor().unwrap(), u);
        let bad = FactorDoc { n: 1, rank: 1, entries: vec![[1.0, 0.0]] };
        assert!(matches!(bad.to_factor(), Err(Error::Validation(_))));
    }

    #[test]
    fn trace_round_trip() {
        let rows = vec![
            TraceRow { iter: 0, seconds: 0.5, objective: 1.25, grad_norm: 0.1, bound: None },
            TraceRow { iter: 1, seconds: 0.75, objective: 1.0, grad_norm: 1e-9, bound: Some(3e-7) },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&rows, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(read_trace_csv(&text).unwrap(), rows);
    }
}
