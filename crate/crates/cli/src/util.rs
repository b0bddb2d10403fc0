use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use clap::ValueEnum;
use qst::certify::{gap_bound, gap_bound_with, CertMethod, Certificate, LanczosOptions};
use qst::objective::{Engine, PenalizedObjective};
use qst::povm::{dfe_budget, PovmFamily};
use qst::states::StateKind;
use qst::{CMatrix, Error};

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Write `text` to `path`, or to stdout when `path` is `-`.
pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if path.as_os_str() == "-" {
        std::io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn parse_kind(s: &str) -> Result<StateKind, Error> {
    s.parse()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Pauli,
    Tetrahedral,
}

impl From<Family> for PovmFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Pauli => PovmFamily::Pauli,
            Family::Tetrahedral => PovmFamily::Tetrahedral,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineChoice {
    /// qmt up to the dense cap, lowmem above it.
    Auto,
    Qmt,
    Lowmem,
}

/// Tetrahedral data always uses the dense transform.
pub fn resolve_engine(choice: EngineChoice, family: PovmFamily, n: usize, dense_cap: usize) -> Engine {
    match choice {
        EngineChoice::Qmt => Engine::Qmt,
        EngineChoice::Lowmem => Engine::Lowmem,
        EngineChoice::Auto if family == PovmFamily::Tetrahedral || n <= dense_cap => Engine::Qmt,
        EngineChoice::Auto => Engine::Lowmem,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CertChoice {
    /// Dense eigendecomposition up to 8 qubits, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

pub fn certificate(u: &CMatrix, ctx: &PenalizedObjective, choice: CertChoice) -> qst::Result<Certificate> {
    let opts = LanczosOptions::default();
    match choice {
        CertChoice::Auto => gap_bound(u, ctx),
        CertChoice::Dense => gap_bound_with(u, ctx, CertMethod::DenseEig, &opts),
        CertChoice::Lanczos => gap_bound_with(u, ctx, CertMethod::Lanczos, &opts),
    }
}

/// How many Pauli strings to measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NumPaulis {
    Full,
    /// Direct-fidelity-estimation budget from failure probability and error.
    Dfe { delta: f64, epsilon: f64 },
    Count(usize),
}

impl NumPaulis {
    /// `None` for the full ensemble.
    pub fn budget(&self) -> qst::Result<Option<usize>> {
        match *self {
            NumPaulis::Full => Ok(None),
            NumPaulis::Dfe { delta, epsilon } => dfe_budget(delta, epsilon).map(Some),
            NumPaulis::Count(k) => Ok(Some(k)),
        }
    }
}

impl FromStr for NumPaulis {
    type Err = String;

    /// `full`, `dfe` (delta 0.1, epsilon 0.03), `dfe(delta,epsilon)` or a count.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "full" {
            return Ok(NumPaulis::Full);
        }
        if s == "dfe" {
            return Ok(NumPaulis::Dfe { delta: 0.1, epsilon: 0.03 });
        }
        if let Some(inner) = s.strip_prefix("dfe(").and_then(|r| r.strip_suffix(')')) {
            let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
            if let [d, e] = parts[..] {
                let delta = d.parse::<f64>().map_err(|e| format!("bad delta '{d}': {e}"))?;
                let epsilon = e.parse::<f64>().map_err(|err| format!("bad epsilon '{e}': {err}"))?;
                return Ok(NumPaulis::Dfe { delta, epsilon });
            }
            return Err(format!("expected dfe(delta,epsilon), got '{s}'"));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("need at least one Pauli string".into()),
            Ok(k) => Ok(NumPaulis::Count(k)),
            Err(_) => Err(format!("expected 'full', 'dfe(delta,epsilon)' or a count, got '{s}'")),
        }
    }
}

impl fmt::Display for NumPaulis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumPaulis::Full => f.write_str("full"),
            NumPaulis::Dfe { delta, epsilon } => write!(f, "dfe({delta},{epsilon})"),
            NumPaulis::Count(k) => write!(f, "{k}"),
        }
    }
}

/// Seconds per call: the best of three batches, each at least 50 ms long.
pub fn time_per_call(mut f: impl FnMut()) -> f64 {
    f();
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if t.elapsed().as_secs_f64() >= 0.05 {
            break;
        }
        reps *= 2;
    }
    (0..3)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}
