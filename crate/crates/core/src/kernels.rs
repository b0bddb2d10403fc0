//! Measurement kernels.
//!
//! The QMT maps a dense `d x d` operator to all `4^n` Pauli expectations (or
//! all tetrahedral outcome probabilities) by interleaving row and column bits
//! into a rank-`n` tensor of 4-dim axes and applying a 4x4 transform on every
//! axis. Its adjoint maps coefficient vectors back to operators, which is how
//! gradients are assembled.
//!
//! The low-memory kernels act on `d x r` factors only.

use std::cell::RefCell;

use crate::error::{domain, Error, Result};
use crate::linalg::{CMatrix, C64, I, ZERO};
use crate::objective::FrequencyTable;
use crate::parallel;
use crate::povm::{tetrahedral_element, PauliString, PovmFamily};
use crate::states::{qubits_for_dim, DEFAULT_DENSE_CAP};

/// Work size below which loops stay sequential.
const PAR_MIN: usize = 1 << 14;

/// Rank-`n` tensor with 4-dim axes, flattened row-major.
///
/// Entry `rho[i, j]` lives at the index whose base-4 digit `k` is
/// `2 * i_k + j_k`, where `i_k` is the bit of `i` for qubit `k`
/// (qubit 0 most significant).
#[derive(Clone, Debug, PartialEq)]
pub struct InterleavedTensor {
    n: usize,
    data: Vec<C64>,
}

impl InterleavedTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Entry at tensor position `(i_0, j_0, i_1, j_1, ...)`.
    pub fn get(&self, pos: &[usize]) -> C64 {
        let idx = pos.iter().fold(0usize, |acc, &b| (acc << 1) | b);
        self.data[idx]
    }
}

/// Spread the bits of `0..d` to even positions.
fn spread_table(n: usize) -> Vec<usize> {
    let d = 1usize << n;
    let mut t = vec![0usize; d];
    for i in 1..d {
        // Bit b of i goes to bit 2b.
        t[i] = t[i >> 1] << 2 | (i & 1);
    }
    t
}

fn dense_qubits(rho: &CMatrix) -> Result<usize> {
    if rho.nrows() != rho.ncols() {
        return domain(format!("matrix is {}x{}, expected square", rho.nrows(), rho.ncols()));
    }
    qubits_for_dim(rho.nrows())
}

fn check_transform_capacity(n: usize) -> Result<()> {
    if n > DEFAULT_DENSE_CAP {
        return Err(Error::Capacity {
            what: format!("{n}-qubit measurement transform"),
            limit: format!("{DEFAULT_DENSE_CAP} qubits"),
        });
    }
    Ok(())
}

/// Side of the square tiles used by the shuffles; a tile maps to one
/// contiguous run of the tensor.
const TILE_BITS: usize = 5;

/// Interleave the row and column bits of `rho` into a rank-`n` tensor.
pub fn shuffle_forward(rho: &CMatrix) -> Result<InterleavedTensor> {
    shuffle_with(rho, None)
}

/// Tiled shuffle that also applies `map` to the axes lying inside a tile
/// while the tile is still in cache.
fn shuffle_with(rho: &CMatrix, map: Option<&AxisMap>) -> Result<InterleavedTensor> {
    let n = dense_qubits(rho)?;
    let mut data = vec![ZERO; 1usize << (2 * n)];
    shuffle_into(rho, n, map, &mut data);
    Ok(InterleavedTensor { n, data })
}

/// Tiled shuffle into `data`, which must hold `4^n` entries.
fn shuffle_into(rho: &CMatrix, n: usize, map: Option<&AxisMap>, data: &mut [C64]) {
    let d = 1usize << n;
    let b = n.min(TILE_BITS);
    let t = 1usize << b;
    let sp = spread_table(n);
    let src = rho.as_slice();
    // Tile (ti, tj) fills the run starting at interleave(ti, tj) << 2b.
    parallel::for_each_chunk_mut(data, t * t, |c, out| {
        let (ti, tj) = tile_coords(c);
        for jl in 0..t {
            let col = &src[(tj * t + jl) * d + ti * t..][..t];
            let off = sp[jl];
            for (il, &v) in col.iter().enumerate() {
                out[(sp[il] << 1) | off] = v;
            }
        }
        if let Some(map) = map {
            low_axes(out, b, map);
        }
    });
}

/// Row and column tile of the `c`-th contiguous tensor run: odd bits of
/// `c` give the row tile, even bits the column tile.
fn tile_coords(c: usize) -> (usize, usize) {
    let (mut ti, mut tj) = (0usize, 0usize);
    let mut k = 0;
    let mut c = c;
    while c > 0 {
        tj |= (c & 1) << k;
        ti |= ((c >> 1) & 1) << k;
        c >>= 2;
        k += 1;
    }
    (ti, tj)
}

/// Inverse of [`shuffle_forward`].
pub fn unshuffle(t: &InterleavedTensor) -> CMatrix {
    unshuffle_with(t.n, &t.data, None)
}

/// Tiled unshuffle that first applies `map` to the in-tile axes.
fn unshuffle_with(n: usize, data: &[C64], map: Option<&AxisMap>) -> CMatrix {
    let d = 1usize << n;
    let b = n.min(TILE_BITS);
    let (ts, nt) = (1usize << b, d >> b);
    let sp = spread_table(n);
    let mut out = CMatrix::zeros(d, d);
    // Column-major: each chunk of `ts` columns is contiguous.
    parallel::for_each_chunk_mut(out.as_mut_slice(), ts * d, |tj, cols| {
        let mut buf = vec![ZERO; ts * ts];
        for ti in 0..nt {
            let start = ((sp[ti] << 1) | sp[tj]) << (2 * b);
            buf.copy_from_slice(&data[start..start + ts * ts]);
            if let Some(map) = map {
                low_axes(&mut buf, b, map);
            }
            for jl in 0..ts {
                let col = &mut cols[jl * d + ti * ts..][..ts];
                let off = sp[jl];
                for (il, v) in col.iter_mut().enumerate() {
                    *v = buf[(sp[il] << 1) | off];
                }
            }
        }
    });
    out
}

#[derive(Clone, Copy, Debug)]
enum AxisMap {
    PauliForward,
    PauliAdjoint,
    Matrix([[C64; 4]; 4]),
}

impl AxisMap {
    #[inline]
    fn apply(&self, v: [C64; 4]) -> [C64; 4] {
        match self {
            // Rows (I, X, Y, Z) of sigma_q[j, i] over pair digit 2i + j.
            AxisMap::PauliForward => [
                v[0] + v[3],
                v[1] + v[2],
                I * (v[1] - v[2]),
                v[0] - v[3],
            ],
            AxisMap::PauliAdjoint => [
                v[0] + v[3],
                v[1] - I * v[2],
                v[1] + I * v[2],
                v[0] - v[3],
            ],
            AxisMap::Matrix(m) => {
                let mut out = [ZERO; 4];
                for (o, row) in out.iter_mut().zip(m) {
                    *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
                }
                out
            }
        }
    }
}

fn tetrahedral_forward() -> [[C64; 4]; 4] {
    let mut m = [[ZERO; 4]; 4];
    for (k, row) in m.iter_mut().enumerate() {
        let a = tetrahedral_element(k);
        for i in 0..2 {
            for j in 0..2 {
                row[2 * i + j] = a[(j, i)];
            }
        }
    }
    m
}

fn tetrahedral_adjoint() -> [[C64; 4]; 4] {
    let f = tetrahedral_forward();
    let mut m = [[ZERO; 4]; 4];
    for a in 0..4 {
        for k in 0..4 {
            m[a][k] = f[k][a].conj();
        }
    }
    m
}

fn quad_pass(x0: &mut [C64], x1: &mut [C64], x2: &mut [C64], x3: &mut [C64], map: &AxisMap) {
    for o in 0..x0.len() {
        let y = map.apply([x0[o], x1[o], x2[o], x3[o]]);
        x0[o] = y[0];
        x1[o] = y[1];
        x2[o] = y[2];
        x3[o] = y[3];
    }
}

fn split4(b: &mut [C64], s: usize) -> (&mut [C64], &mut [C64], &mut [C64], &mut [C64]) {
    let (a0, rest) = b.split_at_mut(s);
    let (a1, rest) = rest.split_at_mut(s);
    let (a2, a3) = rest.split_at_mut(s);
    (a0, a1, a2, a3)
}

/// Apply `map` along the first `b` axes of a contiguous run, sequentially.
fn low_axes(run: &mut [C64], b: usize, map: &AxisMap) {
    let mut s = 1usize;
    for _ in 0..b {
        for blk in run.chunks_mut(4 * s) {
            let (a0, a1, a2, a3) = split4(blk, s);
            quad_pass(a0, a1, a2, a3, map);
        }
        s *= 4;
    }
}

/// Apply `map` along the axis with stride `s`.
fn transform_axis(data: &mut [C64], s: usize, map: &AxisMap) {
    let block = 4 * s;
    if block >= PAR_MIN {
        for b in data.chunks_mut(block) {
            let (a0, a1, a2, a3) = split4(b, s);
            parallel::for_each_zip4_mut(a0, a1, a2, a3, PAR_MIN / 4, |x0, x1, x2, x3| {
                quad_pass(x0, x1, x2, x3, map)
            });
        }
    } else {
        let chunk = block * (PAR_MIN / block).max(1);
        parallel::for_each_chunk_mut(data, chunk, |_, c| {
            for b in c.chunks_mut(block) {
                let (a0, a1, a2, a3) = split4(b, s);
                quad_pass(a0, a1, a2, a3, map);
            }
        });
    }
}

/// Sixteen lockstep segments; segment `4a + c` holds digit `c` of the axis
/// with stride `s` and digit `a` of the axis with stride `4s`.
fn hex_pass(seg: &mut [&mut [C64]], map: &AxisMap) {
    const SUB: usize = 64;
    let len = seg[0].len();
    let mut lo = 0;
    while lo < len {
        let hi = (lo + SUB).min(len);
        let mut it = seg.iter_mut();
        let mut p: [&mut [C64]; 16] = std::array::from_fn(|_| &mut it.next().expect("sixteen segments")[lo..hi]);
        // Stride-s axis within each row of four, then the stride-4s axis.
        for a in 0..4 {
            let [x0, x1, x2, x3] = p.get_disjoint_mut([4 * a, 4 * a + 1, 4 * a + 2, 4 * a + 3]).expect("distinct");
            quad_pass(x0, x1, x2, x3, map);
        }
        for c in 0..4 {
            let [x0, x1, x2, x3] = p.get_disjoint_mut([c, 4 + c, 8 + c, 12 + c]).expect("distinct");
            quad_pass(x0, x1, x2, x3, map);
        }
        lo = hi;
    }
}

/// Apply `map` along the axes with strides `s` and `4s` in one sweep.
fn transform_axis_pair(data: &mut [C64], s: usize, map: &AxisMap) {
    let piece = s.min((PAR_MIN / 16).max(1));
    let mut groups: Vec<Vec<&mut [C64]>> = Vec::with_capacity(data.len() / (16 * piece));
    for block in data.chunks_mut(16 * s) {
        let mut segs: Vec<_> = block.chunks_mut(s).map(|seg| seg.chunks_mut(piece)).collect();
        while let Some(first) = segs[0].next() {
            let mut g = Vec::with_capacity(16);
            g.push(first);
            g.extend(segs[1..].iter_mut().map(|it| it.next().expect("equal segments")));
            groups.push(g);
        }
    }
    parallel::for_each_mut(&mut groups, |g| hex_pass(g, map));
}

/// Apply `map` along the axes at and above the tile width.
fn high_axes(data: &mut [C64], n: usize, map: &AxisMap) {
    let b = n.min(TILE_BITS);
    let mut s = 1usize << (2 * b);
    let mut k = b;
    while k + 1 < n {
        transform_axis_pair(data, s, map);
        s *= 16;
        k += 2;
    }
    if k < n {
        transform_axis(data, s, map);
    }
}

/// All `4^n` Pauli expectations `x_l = tr(W_l rho)` ordered by string index.
///
/// `rho` is any Hermitian matrix; `x_0 = tr(rho)`.
pub fn qmt(rho: &CMatrix) -> Result<Vec<f64>> {
    transform(rho, PovmFamily::Pauli)
}

/// All `4^n` tetrahedral outcome probabilities `tr(A_t rho)`.
pub fn qmt_tetrahedral(rho: &CMatrix) -> Result<Vec<f64>> {
    transform(rho, PovmFamily::Tetrahedral)
}

/// Forward transform for the given family.
pub fn transform(rho: &CMatrix, family: PovmFamily) -> Result<Vec<f64>> {
    let n = dense_qubits(rho)?;
    check_transform_capacity(n)?;
    let map = match family {
        PovmFamily::Pauli => AxisMap::PauliForward,
        PovmFamily::Tetrahedral => AxisMap::Matrix(tetrahedral_forward()),
    };
    Ok(with_scratch(1usize << (2 * n), |data| {
        shuffle_into(rho, n, Some(&map), data);
        high_axes(data, n, &map);
        let mut out = Vec::with_capacity(data.len());
        advise_huge_pages(&mut out);
        out.extend(data.iter().map(|z| z.re));
        out
    }))
}

/// Adjoint transform: `sum_l c_l W_l` (Pauli) or `sum_t c_t A_t` (tetrahedral).
pub fn transform_adjoint(coeffs: &[f64], n: usize, family: PovmFamily) -> Result<CMatrix> {
    check_transform_capacity(n)?;
    if coeffs.len() != 1usize << (2 * n) {
        return domain(format!("expected {} coefficients, got {}", 1usize << (2 * n), coeffs.len()));
    }
    let map = match family {
        PovmFamily::Pauli => AxisMap::PauliAdjoint,
        PovmFamily::Tetrahedral => AxisMap::Matrix(tetrahedral_adjoint()),
    };
    Ok(with_scratch(coeffs.len(), |data| {
        for (z, &c) in data.iter_mut().zip(coeffs) {
            *z = C64::new(c, 0.0);
        }
        high_axes(data, n, &map);
        unshuffle_with(n, data, Some(&map))
    }))
}

thread_local! {
    static SCRATCH: RefCell<Vec<C64>> = const { RefCell::new(Vec::new()) };
}

/// Run `f` on a per-thread work buffer of `len` entries with unspecified
/// contents.
///
/// Reusing the buffer keeps repeated transforms of one size from faulting in
/// fresh pages on every call. Release it with [`release_scratch`].
fn with_scratch<T>(len: usize, f: impl FnOnce(&mut [C64]) -> T) -> T {
    let mut buf = SCRATCH.with(|s| std::mem::take(&mut *s.borrow_mut()));
    if buf.capacity() < len {
        buf = Vec::with_capacity(len);
        advise_huge_pages(&mut buf);
    }
    buf.resize(len, ZERO);
    let out = f(&mut buf[..len]);
    SCRATCH.with(|s| *s.borrow_mut() = buf);
    out
}

/// Ask for transparent huge pages over the untouched capacity of a large
/// buffer.
///
/// The axis sweeps stride across the whole buffer, so with small pages
/// large transforms spend much of their time on TLB misses.
#[cfg(target_os = "linux")]
fn advise_huge_pages<T>(buf: &mut Vec<T>) {
    const HUGE: usize = 2 << 20;
    let start = buf.as_mut_ptr() as usize;
    let end = start + buf.capacity() * std::mem::size_of::<T>();
    let lo = start.next_multiple_of(HUGE);
    let hi = end / HUGE * HUGE;
    if hi > lo {
        // SAFETY: [lo, hi) lies inside the allocation owned by `buf`; the
        // advice changes paging only, never the contents or the mapping.
        unsafe {
            libc::madvise(lo as *mut libc::c_void, hi - lo, libc::MADV_HUGEPAGE);
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn advise_huge_pages<T>(_buf: &mut Vec<T>) {}

/// Free the calling thread's transform work buffer.
pub fn release_scratch() {
    SCRATCH.with(|s| *s.borrow_mut() = Vec::new());
}

/// Outcome probabilities of every POVM element, in linear-index order.
///
/// Pauli outcomes use `p = (tr(rho) +- x_l) / 2`.
pub fn outcome_probabilities(rho: &CMatrix, family: PovmFamily, strings: &[PauliString]) -> Result<Vec<f64>> {
    let x = transform(rho, family)?;
    Ok(match family {
        PovmFamily::Tetrahedral => x,
        PovmFamily::Pauli => strings
            .iter()
            .flat_map(|s| {
                let xl = x[s.index() as usize];
                [0.5 * (x[0] + xl), 0.5 * (x[0] - xl)]
            })
            .collect(),
    })
}

/// `G = -sum_i (f_i / tr(A_i rho)) A_i` over every measured outcome.
///
/// Outcomes with `f_i = 0` are skipped.
pub fn qmt_gradient(rho: &CMatrix, freqs: &FrequencyTable) -> Result<CMatrix> {
    let ens = freqs.ensemble();
    let n = dense_qubits(rho)?;
    if n != ens.n() {
        return domain(format!("state has {n} qubits, frequencies {}", ens.n()));
    }
    let p = outcome_probabilities(rho, ens.family(), ens.strings())?;
    let coeffs = gradient_coefficients(&p, freqs)?;
    transform_adjoint(&coeffs, n, ens.family())
}

/// Coefficients of the gradient in the transform basis, or the first
/// singular outcome.
pub(crate) fn gradient_coefficients(p: &[f64], freqs: &FrequencyTable) -> Result<Vec<f64>> {
    let ens = freqs.ensemble();
    let f = freqs.freqs();
    let m_each = ens.m_each();
    let singular = |i: usize| Error::SingularProbability {
        povm: i / m_each,
        outcome: i % m_each,
        p: p[i],
    };
    let mut c = vec![0.0; 1usize << (2 * ens.n())];
    match ens.family() {
        PovmFamily::Tetrahedral => {
            for i in 0..f.len() {
                if f[i] > 0.0 {
                    if p[i] <= 0.0 {
                        return Err(singular(i));
                    }
                    c[i] = -f[i] / p[i];
                }
            }
        }
        PovmFamily::Pauli => {
            for (l, s) in ens.strings().iter().enumerate() {
                let mut ab = [0.0; 2];
                for k in 0..2 {
                    let i = 2 * l + k;
                    if f[i] > 0.0 {
                        if p[i] <= 0.0 {
                            return Err(singular(i));
                        }
                        ab[k] = f[i] / p[i];
                    }
                }
                c[0] -= 0.5 * (ab[0] + ab[1]);
                c[s.index() as usize] -= 0.5 * (ab[0] - ab[1]);
            }
        }
    }
    Ok(c)
}

/// `(-1)^{popcount(bits)}` without a branch.
#[inline(always)]
fn sign_f64(bits: usize) -> f64 {
    1.0 - 2.0 * (bits.count_ones() & 1) as f64
}

/// Compact form of a Pauli string: `W|k> = phase * (-1)^{|k & z|} |k ^ x>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliMask {
    pub x: usize,
    pub z: usize,
    pub phase: C64,
}

impl PauliMask {
    pub fn new(s: &PauliString) -> Self {
        let (x, z, ny) = s.masks();
        Self {
            x: x as usize,
            z: z as usize,
            phase: I.powu(ny),
        }
    }

    #[inline]
    fn sign(&self, k: usize) -> f64 {
        if (k & self.z).count_ones() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `W u` in one pass over the rows.
    pub fn apply(&self, u: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(u.nrows(), u.ncols());
        for c in 0..u.ncols() {
            for k in 0..u.nrows() {
                out[(k ^ self.x, c)] = self.phase * u[(k, c)] * self.sign(k);
            }
        }
        out
    }

    /// `Re tr(U^dagger W U)` without forming `W U`.
    pub fn expectation(&self, u: &CMatrix) -> f64 {
        let lo = parity_bits(self.z);
        let (mut re, mut im) = (0.0, 0.0);
        for c in 0..u.ncols() {
            let col = u.column(c);
            let col = col.as_slice();
            for (blk, b) in col.chunks(64).enumerate() {
                let base = blk * 64;
                // Four independent lanes keep the adds from serializing.
                let mut bre = [0.0; 4];
                let mut bim = [0.0; 4];
                for (j, b) in b.iter().enumerate() {
                    let a = col[(base + j) ^ self.x];
                    let sg = bit_sign(lo, j);
                    // conj(a) * b
                    bre[j & 3] += sg * (a.re * b.re + a.im * b.im);
                    bim[j & 3] += sg * (a.re * b.im - a.im * b.re);
                }
                let outer = sign_f64(base & self.z);
                re += outer * ((bre[0] + bre[1]) + (bre[2] + bre[3]));
                im += outer * ((bim[0] + bim[1]) + (bim[2] + bim[3]));
            }
        }
        (self.phase * C64::new(re, im)).re
    }
}

/// Bit `j` holds the parity of `j & z` for `j < 64`.
fn parity_bits(z: usize) -> u64 {
    (0..64u64).fold(0, |acc, j| acc | ((((j as usize) & z).count_ones() as u64 & 1) << j))
}

#[inline(always)]
fn bit_sign(bits: u64, j: usize) -> f64 {
    1.0 - 2.0 * ((bits >> j) & 1) as f64
}

fn check_factor_rows(u: &CMatrix, n: usize) -> Result<()> {
    if u.nrows() != 1usize << n {
        return domain(format!("factor has {} rows, string acts on {n} qubits", u.nrows()));
    }
    Ok(())
}

/// `W u` computed one qubit at a time on a copy of `u`.
pub fn apply_pauli(u: &CMatrix, s: &PauliString) -> Result<CMatrix> {
    let mut out = u.clone();
    apply_pauli_in_place(&mut out, s)?;
    Ok(out)
}

/// Copy `u` into `scratch` and overwrite it with `W u`. The scratch buffer is
/// resized only when its shape differs.
pub fn apply_pauli_into(u: &CMatrix, s: &PauliString, scratch: &mut CMatrix) -> Result<()> {
    if scratch.shape() != u.shape() {
        *scratch = u.clone();
    } else {
        scratch.copy_from(u);
    }
    apply_pauli_in_place(scratch, s)
}

/// Per-qubit rules: X swaps the halves of each stride block, Z negates the
/// upper half, Y swaps then scales by `-i` and `+i` (`Y = i X Z`).
pub fn apply_pauli_in_place(u: &mut CMatrix, s: &PauliString) -> Result<()> {
    let n = s.n();
    check_factor_rows(u, n)?;
    let d = u.nrows();
    for (j, &q) in s.digits().iter().enumerate() {
        if q == 0 {
            continue;
        }
        let m = 1usize << (n - 1 - j);
        for col in u.as_mut_slice().chunks_mut(d) {
            for block in col.chunks_mut(2 * m) {
                let (lo, hi) = block.split_at_mut(m);
                match q {
                    1 => lo.swap_with_slice(hi),
                    2 => {
                        lo.swap_with_slice(hi);
                        lo.iter_mut().for_each(|z| *z *= -I);
                        hi.iter_mut().for_each(|z| *z *= I);
                    }
                    _ => hi.iter_mut().for_each(|z| *z = -*z),
                }
            }
        }
    }
    Ok(())
}

/// `Re tr(U^dagger W_j U)` for every string.
pub fn probs_lowmem(u: &CMatrix, strings: &[PauliString]) -> Result<Vec<f64>> {
    if strings.is_empty() {
        return domain("no Pauli strings given");
    }
    for s in strings {
        check_factor_rows(u, s.n())?;
    }
    let masks: Vec<PauliMask> = strings.iter().map(PauliMask::new).collect();
    Ok(expectations_masked(u, &masks))
}

pub(crate) fn expectations_masked(u: &CMatrix, masks: &[PauliMask]) -> Vec<f64> {
    if masks.len() * u.len() < PAR_MIN {
        masks.iter().map(|m| m.expectation(u)).collect()
    } else {
        parallel::map_collect(masks.len(), |l| masks[l].expectation(u))
    }
}

/// Operator `scalar * I + sum_l coeff_l W_l` applied to `v` by a row gather.
///
/// Each output row is accumulated in a fixed string order, so the result does
/// not depend on the thread count.
pub(crate) fn apply_pauli_sum(scalar: f64, terms: &[(PauliMask, f64)], v: &CMatrix) -> CMatrix {
    let d = v.nrows();
    let mut out = v * C64::new(scalar, 0.0);
    // Fold the phase and sign(x & z) into the coefficient once; the row sign
    // is then sign(r & z) for output row r.
    let terms: Vec<(usize, usize, C64, u64)> = terms
        .iter()
        .map(|(m, c)| (m.x, m.z, m.phase * *c * sign_f64(m.x & m.z), parity_bits(m.z)))
        .collect();
    let src = v.as_slice();
    let block = d.min((PAR_MIN / terms.len().max(1)).next_power_of_two().max(64));
    let work = |idx: usize, chunk: &mut [C64]| {
        let start = idx * block;
        let col = start / d;
        let row0 = start % d;
        let vcol = &src[col * d..(col + 1) * d];
        for &(x, z, coef, lo) in &terms {
            for (sub, part) in chunk.chunks_mut(64).enumerate() {
                let r0 = row0 + 64 * sub;
                let c = coef * sign_f64(r0 & z);
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot += c * vcol[(r0 + j) ^ x] * bit_sign(lo, j);
                }
            }
        }
    };
    if terms.len() * v.len() < PAR_MIN {
        for (idx, chunk) in out.as_mut_slice().chunks_mut(block).enumerate() {
            work(idx, chunk);
        }
    } else {
        parallel::for_each_chunk_mut(out.as_mut_slice(), block, work);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, ONE};
    use crate::states::DensityMatrix;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_factor(d: usize, r: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(d, r, |_, _| crate::states::complex_gaussian(&mut rng))
    }

    fn random_state(n: usize, seed: u64) -> CMatrix {
        let u = random_factor(1 << n, 1 << n, seed);
        let rho = &u * u.adjoint();
        let t = linalg::trace(&rho);
        rho / t
    }

    #[test]
    fn shuffle_n2_positions() {
        let rho = CMatrix::from_fn(4, 4, |i, j| C64::new((4 * i + j) as f64, 0.0));
        let t = shuffle_forward(&rho).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (i1, i2, j1, j2) = (i >> 1, i & 1, j >> 1, j & 1);
                assert_eq!(t.get(&[i1, j1, i2, j2]), rho[(i, j)]);
            }
        }
        assert_eq!(unshuffle(&t), rho);
        let one = CMatrix::from_fn(2, 2, |i, j| C64::new((2 * i + j) as f64, 1.0));
        assert_eq!(shuffle_forward(&one).unwrap().data(), &[one[(0, 0)], one[(0, 1)], one[(1, 0)], one[(1, 1)]]);
        assert!(shuffle_forward(&CMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn qmt_small_cases() {
        let rho = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ONE, ZERO]));
        assert_eq!(qmt(&rho).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let mixed = DensityMatrix::maximally_mixed(2);
        let x = qmt(mixed.matrix()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert!(x[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn qmt_matches_dense_traces() {
        let rho = random_state(3, 5);
        let x = qmt(&rho).unwrap();
        for l in 0..64u64 {
            let w = PauliString::from_index(3, l).unwrap().to_dense();
            let expect = linalg::trace(&(w * &rho)).re;
            assert_abs_diff_eq!(x[l as usize], expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn tetrahedral_transform_matches_dense() {
        let rho = random_state(2, 8);
        let p = qmt_tetrahedral(&rho).unwrap();
        let ens = crate::povm::tetrahedral_ensemble(2, 8).unwrap();
        for t in 0..16 {
            assert_abs_diff_eq!(p[t], linalg::trace(&(ens.element(t) * &rho)).re, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adjoint_matches_dense_sum() {
        for family in [PovmFamily::Pauli, PovmFamily::Tetrahedral] {
            let c: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let g = transform_adjoint(&c, 3, family).unwrap();
            let mut expect = CMatrix::zeros(8, 8);
            for (l, &cl) in c.iter().enumerate() {
                let a = match family {
                    PovmFamily::Pauli => PauliString::from_index(3, l as u64).unwrap().to_dense(),
                    PovmFamily::Tetrahedral => crate::povm::tetrahedral_ensemble(3, 8).unwrap().element(l),
                };
                expect += a * C64::new(cl, 0.0);
            }
            assert!((g - expect).norm() < 1e-12);
        }
    }

    /// Untiled reference: shuffle, then one sweep per axis.
    fn transform_reference(rho: &CMatrix, map: &AxisMap) -> Vec<C64> {
        let mut t = shuffle_forward(rho).unwrap();
        let mut s = 1;
        for _ in 0..t.n() {
            transform_axis(&mut t.data, s, map);
            s *= 4;
        }
        t.data
    }

    #[test]
    fn tiled_transforms_match_reference() {
        for n in 5..=8 {
            let d = 1 << n;
            let u = random_factor(d, 2, 40 + n as u64);
            let rho = &u * u.adjoint();
            for (family, fwd, adj) in [
                (PovmFamily::Pauli, AxisMap::PauliForward, AxisMap::PauliAdjoint),
                (PovmFamily::Tetrahedral, AxisMap::Matrix(tetrahedral_forward()), AxisMap::Matrix(tetrahedral_adjoint())),
            ] {
                let want = transform_reference(&rho, &fwd);
                let got = transform(&rho, family).unwrap();
                for (g, w) in got.iter().zip(&want) {
                    assert_abs_diff_eq!(*g, w.re, epsilon = 1e-10);
                }
                let coeffs: Vec<f64> = (0..d * d).map(|k| ((k * 37 % 101) as f64).sin()).collect();
                let mut data: Vec<C64> = coeffs.iter().map(|&c| C64::new(c, 0.0)).collect();
                let mut s = 1;
                for _ in 0..n {
                    transform_axis(&mut data, s, &adj);
                    s *= 4;
                }
                let want = unshuffle(&InterleavedTensor { n, data });
                let got = transform_adjoint(&coeffs, n, family).unwrap();
                assert!((got - want).norm() <= 1e-10 * (d * d) as f64);
            }
        }
        release_scratch();
    }

    #[test]
    fn apply_pauli_examples() {
        let u = CMatrix::from_fn(4, 1, |i, _| C64::new(i as f64 + 1.0, 0.0));
        let s = PauliString::from_digits(vec![3, 1]).unwrap();
        let w = apply_pauli(&u, &s).unwrap();
        let expect: Vec<C64> = [2.0, 1.0, -4.0, -3.0].iter().map(|&v| C64::new(v, 0.0)).collect();
        assert_eq!(w.as_slice(), &expect[..]);

        let ab = CMatrix::from_vec(2, 1, vec![C64::new(2.0, 0.0), C64::new(0.0, 3.0)]);
        let y = apply_pauli(&ab, &PauliString::from_label("Y").unwrap()).unwrap();
        assert_eq!(y[(0, 0)], -I * ab[(1, 0)]);
        assert_eq!(y[(1, 0)], I * ab[(0, 0)]);
        assert!(apply_pauli(&ab, &s).is_err());
    }

    #[test]
    fn masked_apply_matches_per_qubit() {
        let u = random_factor(16, 3, 2);
        for l in 0..256 {
            let s = PauliString::from_index(4, l).unwrap();
            let a = apply_pauli(&u, &s).unwrap();
            assert!((PauliMask::new(&s).apply(&u) - &a).norm() < 1e-14);
            let mut scratch = CMatrix::zeros(1, 1);
            apply_pauli_into(&u, &s, &mut scratch).unwrap();
            assert_eq!(scratch, a);
        }
    }

    #[test]
    fn probs_lowmem_cases() {
        let mut e0 = CMatrix::zeros(8, 1);
        e0[(0, 0)] = ONE;
        let zzz = PauliString::from_label("ZZZ").unwrap();
        assert_eq!(probs_lowmem(&e0, &[zzz]).unwrap(), vec![1.0]);
        let u = random_factor(8, 2, 4);
        let u = &u / C64::new(u.norm(), 0.0);
        let id = PauliString::from_index(3, 0).unwrap();
        assert_abs_diff_eq!(probs_lowmem(&u, &[id]).unwrap()[0], 1.0, epsilon = 1e-14);
        assert!(probs_lowmem(&u, &[]).is_err());
    }

    #[test]
    fn pauli_sum_operator_matches_dense() {
        let v = random_factor(8, 2, 6);
        let strings: Vec<PauliString> = [5u64, 17, 63, 40].iter().map(|&i| PauliString::from_index(3, i).unwrap()).collect();
        let coeffs = [0.3, -1.2, 0.7, 2.0];
        let terms: Vec<(PauliMask, f64)> = strings.iter().map(PauliMask::new).zip(coeffs).collect();
        let got = apply_pauli_sum(-0.4, &terms, &v);
        let mut op = CMatrix::identity(8, 8) * C64::new(-0.4, 0.0);
        for (s, c) in strings.iter().zip(coeffs) {
            op += s.to_dense() * C64::new(c, 0.0);
        }
        assert!((got - op * &v).norm() < 1e-13);
    }
}
