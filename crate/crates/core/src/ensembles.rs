//! Seeded random-matrix ensembles and the quarter-half-quarter waveplate
//! decomposition of single-qubit unitaries.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::matrix::{ComplexMatrix, C64, ONE, ZERO};

const CUE_RETRIES: usize = 3;

/// A ChaCha8 stream addressed by `(master_seed, stream_index)`.
///
/// Streams with equal addresses produce identical sequences; distinct indices
/// select distinct ChaCha streams of the same key.
#[derive(Clone, Debug)]
pub struct SeededStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Independent child stream for a labelled purpose (unitaries, noise, shots, ...).
    /// Does not advance `self`.
    pub fn substream(&self, label: u64) -> Self {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream_index ^ splitmix64(label)));
        Self::new(key, self.stream_index)
    }
}

impl RngCore for SeededStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Haar-random unitary from the circular unitary ensemble.
///
/// Gram–Schmidt on the columns of a complex Ginibre matrix gives the QR factor
/// whose R has a positive real diagonal, which is the phase-fixed (Haar) choice.
pub fn sample_cue<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if d < 2 {
        return Err(Error::Invalid(format!("CUE dimension {d} < 2")));
    }
    for _ in 0..CUE_RETRIES {
        let cols: Vec<Vec<C64>> = (0..d)
            .map(|_| (0..d).map(|_| complex_normal(rng, 1.0)).collect())
            .collect();
        if let Some(q) = gram_schmidt(cols) {
            return Ok(q);
        }
    }
    Err(Error::Degenerate(format!("QR of a {d}x{d} Ginibre matrix failed {CUE_RETRIES} times")))
}

fn gram_schmidt(mut cols: Vec<Vec<C64>>) -> Option<ComplexMatrix> {
    let d = cols.len();
    for j in 0..d {
        let scale: f64 = cols[j].iter().map(C64::norm_sqr).sum::<f64>().sqrt();
        // two passes keep orthogonality at machine precision
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let qi = &done[i];
                let proj: C64 = qi.iter().zip(rest[0].iter()).map(|(a, b)| a.conj() * b).sum();
                for (v, q) in rest[0].iter_mut().zip(qi) {
                    *v -= proj * q;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(C64::norm_sqr).sum::<f64>().sqrt();
        if !(norm > 1e-10 * scale) || norm == 0.0 {
            return None;
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut q = ComplexMatrix::zeros(d, d);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    Some(q)
}

/// Hermitian matrix from the Gaussian unitary ensemble: real standard-normal
/// diagonal, off-diagonal entries (x+iy)/√2.
pub fn sample_gue<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if d < 2 {
        return Err(Error::Invalid(format!("GUE dimension {d} < 2")));
    }
    let mut h = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        let x: f64 = rng.sample(StandardNormal);
        h[(i, i)] = C64::new(x, 0.0);
        for j in i + 1..d {
            let z = complex_normal(rng, 1.0);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    Ok(h)
}

/// U = ⊗ⱼ u⁽ʲ⁾, one 2×2 unitary per qubit.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUnitary {
    factors: Vec<ComplexMatrix>,
}

impl LocalUnitary {
    pub fn new(factors: Vec<ComplexMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("local unitary with no factors".into()));
        }
        for (j, u) in factors.iter().enumerate() {
            if u.rows() != 2 || u.cols() != 2 {
                return Err(Error::DimensionMismatch(format!("factor {j} is not 2x2")));
            }
            let defect = u.unitarity_defect();
            if defect > 1e-12 {
                return Err(Error::NotUnitary(defect));
            }
        }
        Ok(Self { factors })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            factors: vec![ComplexMatrix::identity(2); n],
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[ComplexMatrix] {
        &self.factors
    }

    pub fn factor(&self, j: usize) -> &ComplexMatrix {
        &self.factors[j]
    }

    /// Left-multiply every factor by the matching entry of `left`.
    pub fn premultiply(&self, left: &[ComplexMatrix]) -> Self {
        Self {
            factors: left.iter().zip(&self.factors).map(|(l, u)| l.matmul(u)).collect(),
        }
    }

    /// The full 2ⁿ×2ⁿ matrix.
    pub fn full(&self) -> ComplexMatrix {
        ComplexMatrix::kron_all(&self.factors)
    }
}

pub fn sample_local_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<LocalUnitary> {
    if n == 0 {
        return Err(Error::Invalid("zero qubits".into()));
    }
    let factors = (0..n).map(|_| sample_cue(2, rng)).collect::<Result<Vec<_>>>()?;
    Ok(LocalUnitary { factors })
}

/// Angles of a quarter-, half-, quarter-wave plate sequence and a global phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveplateTriple {
    pub q1: f64,
    pub h: f64,
    pub q2: f64,
    pub global_phase: f64,
}

fn rotation(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]]
}

fn mul2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// R(θ)·diag(1, e^{iδ})·R(−θ)
fn retarder(theta: f64, delay: C64) -> [[C64; 2]; 2] {
    let d = [[ONE, ZERO], [ZERO, delay]];
    mul2(&mul2(&rotation(theta), &d), &rotation(-theta))
}

fn to_matrix(m: &[[C64; 2]; 2]) -> ComplexMatrix {
    ComplexMatrix::from_rows(&[m[0].to_vec(), m[1].to_vec()]).expect("2x2")
}

/// Jones matrix of a quarter-wave plate at angle θ.
pub fn qwp(theta: f64) -> ComplexMatrix {
    to_matrix(&retarder(theta, C64::new(0.0, 1.0)))
}

/// Jones matrix of a half-wave plate at angle θ.
pub fn hwp(theta: f64) -> ComplexMatrix {
    to_matrix(&retarder(theta, C64::new(-1.0, 0.0)))
}

fn qhq(q1: f64, h: f64, q2: f64) -> [[C64; 2]; 2] {
    let i = C64::new(0.0, 1.0);
    let m = mul2(&retarder(q1, i), &retarder(h, -ONE));
    mul2(&m, &retarder(q2, i))
}

impl WaveplateTriple {
    /// e^{iφ}·QWP(q1)·HWP(h)·QWP(q2)
    pub fn jones(&self) -> ComplexMatrix {
        to_matrix(&qhq(self.q1, self.h, self.q2)).scale(C64::from_polar(1.0, self.global_phase))
    }
}

fn qhq_residual(p: &[f64; 4], u: &[[C64; 2]; 2]) -> [f64; 8] {
    let m = qhq(p[0], p[1], p[2]);
    let ph = C64::from_polar(1.0, p[3]);
    let mut r = [0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            let z = m[i][j] * ph - u[i][j];
            r[4 * i + 2 * j] = z.re;
            r[4 * i + 2 * j + 1] = z.im;
        }
    }
    r
}

fn norm_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Solves the 4×4 system `a x = b` by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Levenberg–Marquardt on the 8 real residuals of e^{iφ}QHQ − u.
fn qhq_refine(mut p: [f64; 4], u: &[[C64; 2]; 2]) -> ([f64; 4], f64) {
    let mut r = qhq_residual(&p, u);
    let mut cost = norm_sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if cost < 1e-30 {
            break;
        }
        let step = 1e-7;
        let mut jac = [[0.0; 4]; 8];
        for k in 0..4 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += step;
            lo[k] -= step;
            let (rh, rl) = (qhq_residual(&hi, u), qhq_residual(&lo, u));
            for i in 0..8 {
                jac[i][k] = (rh[i] - rl[i]) / (2.0 * step);
            }
        }
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for i in 0..8 {
            for a in 0..4 {
                jtr[a] -= jac[i][a] * r[i];
                for b in 0..4 {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * (1.0 + jtj[a][a]);
            }
            let Some(delta) = solve4(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2], p[3] + delta[3]];
            let rt = qhq_residual(&trial, u);
            let ct = norm_sq(&rt);
            if ct < cost {
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost.sqrt())
}

/// Waveplate angles reproducing `u` up to a global phase.
pub fn qhq_decompose(u: &ComplexMatrix) -> Result<WaveplateTriple> {
    if u.rows() != 2 || u.cols() != 2 {
        return Err(Error::DimensionMismatch("Q-H-Q needs a 2x2 unitary".into()));
    }
    let defect = u.unitarity_defect();
    if defect > 1e-10 {
        return Err(Error::NotUnitary(defect));
    }
    let target = [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]];

    // coarse grid over the π-periodic angles, phase fitted in closed form
    const GRID: usize = 12;
    let step = std::f64::consts::PI / GRID as f64;
    let mut starts: Vec<(f64, [f64; 4])> = Vec::with_capacity(GRID * GRID * GRID);
    for a in 0..GRID {
        for b in 0..GRID {
            for c in 0..GRID {
                let (q1, h, q2) = (a as f64 * step, b as f64 * step, c as f64 * step);
                let m = qhq(q1, h, q2);
                let overlap: C64 = (0..2)
                    .flat_map(|i| (0..2).map(move |j| (i, j)))
                    .map(|(i, j)| m[i][j].conj() * target[i][j])
                    .sum();
                starts.push((-overlap.norm(), [q1, h, q2, overlap.arg()]));
            }
        }
    }
    starts.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut best = ([0.0; 4], f64::INFINITY);
    for (_, p0) in starts.iter().take(8) {
        let (p, res) = qhq_refine(*p0, &target);
        if res < best.1 {
            best = (p, res);
        }
        if best.1 < 1e-13 {
            break;
        }
    }
    let [q1, h, q2, phase] = best.0;
    let wrap = |x: f64| x.rem_euclid(std::f64::consts::PI);
    Ok(WaveplateTriple {
        q1: wrap(q1),
        h: wrap(h),
        q2: wrap(q2),
        global_phase: phase.rem_euclid(std::f64::consts::TAU),
    })
}
