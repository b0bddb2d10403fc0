use std::fmt::Write as _;
use std::hint::black_box;
use std::path::PathBuf;

use clap::Args;
use log::info;
use qst::kernels::{probs_lowmem, qmt, release_scratch};
use qst::povm::PauliString;
use qst::solvers::init_factor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::util::{time_per_call, write_text};
use crate::Status;

pub const BENCH_HEADER: &str = "kernel,n,m,r,seconds";

#[derive(Args)]
pub struct BenchArgs {
    /// Qubit count for the sweep over m.
    #[arg(long, default_value_t = 12)]
    m_sweep_n: usize,

    /// String counts for the sweep over m.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    m_sweep: Vec<usize>,

    /// Qubit counts for the lowmem sweep over d at fixed m.
    #[arg(long, value_delimiter = ',', default_value = "10,11,12,13,14,15,16")]
    lowmem_qubits: Vec<usize>,

    /// Strings per evaluation in the lowmem sweep over d.
    #[arg(long, default_value_t = 64)]
    m: usize,

    /// Qubit counts for the dense transform sweep.
    #[arg(long, value_delimiter = ',', default_value = "6,7,8,9,10,11,12")]
    qmt_qubits: Vec<usize>,

    /// Factor rank.
    #[arg(long, default_value_t = 1)]
    rank: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV (`-` for stdout).
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

struct Row {
    kernel: &'static str,
    n: usize,
    m: u64,
    r: usize,
    seconds: f64,
}

fn random_strings(n: usize, m: usize, rng: &mut ChaCha8Rng) -> qst::Result<Vec<PauliString>> {
    (0..m).map(|_| PauliString::from_index(n, rng.random_range(1..1u64 << (2 * n)))).collect()
}

fn lowmem_row(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> anyhow::Result<Row> {
    let u = init_factor(n, r, rng.random())?;
    let s = random_strings(n, m, rng)?;
    probs_lowmem(&u, &s)?;
    let seconds = time_per_call(|| {
        black_box(probs_lowmem(&u, &s).expect("validated above"));
    });
    info!("lowmem n = {n}, m = {m}: {seconds:.3e} s");
    Ok(Row { kernel: "lowmem", n, m: m as u64, r, seconds })
}

fn qmt_row(n: usize, r: usize, rng: &mut ChaCha8Rng) -> anyhow::Result<Row> {
    let u = init_factor(n, r, rng.random())?;
    let rho = &u * u.adjoint();
    qmt(&rho)?;
    let seconds = time_per_call(|| {
        black_box(qmt(&rho).expect("validated above"));
    });
    release_scratch();
    info!("qmt n = {n}: {seconds:.3e} s");
    // Every non-identity string is evaluated.
    Ok(Row { kernel: "qmt", n, m: (1u64 << (2 * n)) - 1, r, seconds })
}

/// Least-squares slope of log(seconds) against log(d).
fn slope(rows: &[Row]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n as f64) * 2f64.ln(), r.seconds.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run(a: BenchArgs) -> anyhow::Result<Status> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rows = Vec::new();
    for &m in &a.m_sweep {
        rows.push(lowmem_row(a.m_sweep_n, m, a.rank, &mut rng)?);
    }
    let by_m: Vec<f64> = rows.windows(2).map(|w| w[1].seconds / w[0].seconds).collect();
    if !by_m.is_empty() {
        info!("lowmem time ratios between consecutive m: {by_m:.3?}");
    }

    let start = rows.len();
    for &n in &a.lowmem_qubits {
        rows.push(lowmem_row(n, a.m, a.rank, &mut rng)?);
    }
    if a.lowmem_qubits.len() > 1 {
        info!("lowmem log-log slope vs d: {:.3}", slope(&rows[start..]));
    }

    let start = rows.len();
    for &n in &a.qmt_qubits {
        rows.push(qmt_row(n, a.rank, &mut rng)?);
    }
    if a.qmt_qubits.len() > 1 {
        info!("qmt log-log slope vs d: {:.3}", slope(&rows[start..]));
    }

    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for r in &rows {
        writeln!(csv, "{},{},{},{},{:e}", r.kernel, r.n, r.m, r.r, r.seconds)?;
    }
    write_text(&a.out, &csv)?;
    Ok(Status::Done)
}
