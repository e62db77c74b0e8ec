//! Gaussian unitary noise and the effective channels of classical shadows and
//! few-shot randomized measurements, compared through Choi states.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amendment::{twirl_operator, weingarten};
use crate::ensembles::{sample_cue, sample_gue, SeededStream};
use crate::error::{Error, Result};
use crate::qcore::eigen::{hermitian_eigenvalues, trace_norm};
use crate::qcore::matrix::{ComplexMatrix, C64};

pub use crate::qcore::eigen::herm_expi;

const CHUNK: usize = 256;

/// Trace-one Choi state J = d⁻¹ Σ_{ij} 𝓜(|i⟩⟨j|) ⊗ |i⟩⟨j| (output factor first).
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiState {
    pub mat: ComplexMatrix,
}

impl ChoiState {
    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    /// Hermitian, unit trace and PSD within `psd_tol`.
    pub fn validate(&self, psd_tol: f64) -> Result<()> {
        if !self.mat.is_hermitian(1e-10) {
            return Err(Error::NotHermitian(self.mat.hermiticity_defect()));
        }
        let tr = self.mat.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(Error::Invalid(format!("Choi trace {} differs from 1", tr.re)));
        }
        let min = hermitian_eigenvalues(&self.mat)?[0];
        if min < -psd_tol {
            return Err(Error::Invalid(format!("Choi state has eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn trace_distance_to(&self, other: &ChoiState) -> Result<f64> {
        trace_norm(&(&self.mat - &other.mat))
    }
}

/// Choi state of a linear map on d×d matrices.
pub fn choi_state(map: impl Fn(&ComplexMatrix) -> ComplexMatrix, d: usize) -> ChoiState {
    let mut blocks = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            blocks.push(((i, j), map(&ComplexMatrix::unit(d, i, j))));
        }
    }
    let d_out = blocks[0].1.rows();
    let mut mat = ComplexMatrix::zeros(d_out * d, d_out * d);
    let w = 1.0 / d as f64;
    for ((i, j), m) in blocks {
        for a in 0..d_out {
            for b in 0..d_out {
                mat[(a * d + i, b * d + j)] = m[(a, b)] * w;
            }
        }
    }
    ChoiState { mat }
}

/// Choi state of ρ ↦ Σ_b ⟨b|ŨρŨ†|b⟩ U†|b⟩⟨b|U with Ũ = e^{iεH}U: outcomes are
/// produced by the noisy unitary, snapshots prepared with the nominal one.
pub fn choi_of_cs_round(u: &ComplexMatrix, h: &ComplexMatrix, eps: f64) -> Result<ChoiState> {
    let d = u.rows();
    let noisy = herm_expi(h, eps)?.matmul(u);
    // J = d⁻¹ Σ_b U†|b⟩⟨b|U ⊗ |r_b⟩⟨r_b|, (r_b)_i = Ũ_{bi}
    let mut mat = ComplexMatrix::zeros(d * d, d * d);
    for b in 0..d {
        let ub: Vec<C64> = u.row(b).iter().map(|z| z.conj()).collect();
        let rb = noisy.row(b);
        for a1 in 0..d {
            for a2 in 0..d {
                let p = ub[a1] * ub[a2].conj() / d as f64;
                for i in 0..d {
                    for j in 0..d {
                        mat[(a1 * d + i, a2 * d + j)] += p * rb[i] * rb[j].conj();
                    }
                }
            }
        }
    }
    Ok(ChoiState { mat })
}

/// Choi state of ρ ↦ Ũ^{⊗k} ρ Ũ^{†⊗k}, Ũ = e^{iεH}U. Rank one: J = vv† with
/// v = d^{−k/2} Σ_i Ũ^{⊗k}|i⟩ ⊗ |i⟩.
pub fn choi_of_fsrm_round(u: &ComplexMatrix, h: &ComplexMatrix, eps: f64, k: usize) -> Result<ChoiState> {
    let noisy = herm_expi(h, eps)?.matmul(u);
    let v = ComplexMatrix::kron_all(std::iter::repeat(&noisy).take(k));
    let dim = v.rows();
    let scale = (dim as f64).sqrt();
    let vec: Vec<C64> = v.data().iter().map(|z| z / scale).collect();
    Ok(ChoiState {
        mat: ComplexMatrix::outer(&vec, &vec),
    })
}

/// Choi state of the noiseless CS channel ρ ↦ (ρ + I·Tr ρ)/(d+1).
pub fn ideal_cs_choi(d: usize) -> ChoiState {
    choi_state(
        |x| {
            let mut out = x.scale_real(1.0 / (d as f64 + 1.0));
            let tr = x.trace() / (d as f64 + 1.0);
            for i in 0..d {
                out[(i, i)] += tr;
            }
            out
        },
        d,
    )
}

/// Choi state of the k-fold Haar twirl on (C^d)^{⊗k}.
pub fn ideal_fsrm_choi(d: usize, k: usize) -> Result<ChoiState> {
    let w = weingarten(k, d)?;
    let dim = d.pow(k as u32);
    let mut units = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            units.push((i, j));
        }
    }
    let images = units
        .par_iter()
        .map(|&(i, j)| twirl_operator(&ComplexMatrix::unit(dim, i, j), &w))
        .collect::<Result<Vec<_>>>()?;
    let mut mat = ComplexMatrix::zeros(dim * dim, dim * dim);
    let s = 1.0 / dim as f64;
    for (&(i, j), m) in units.iter().zip(&images) {
        for a in 0..dim {
            for b in 0..dim {
                mat[(a * dim + i, b * dim + j)] = m[(a, b)] * s;
            }
        }
    }
    Ok(ChoiState { mat })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseScheme {
    Cs,
    Fsrm(usize),
}

impl NoiseScheme {
    pub fn k(&self) -> usize {
        match self {
            NoiseScheme::Cs => 1,
            NoiseScheme::Fsrm(k) => *k,
        }
    }
}

impl FromStr for NoiseScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "cs" {
            return Ok(NoiseScheme::Cs);
        }
        let k = s
            .strip_prefix("fsrm-")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| (1..=3).contains(k))
            .ok_or_else(|| Error::Invalid(format!("scheme {s:?}; expected cs or fsrm-1, fsrm-2, fsrm-3")))?;
        Ok(NoiseScheme::Fsrm(k))
    }
}

impl fmt::Display for NoiseScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseScheme::Cs => f.write_str("cs"),
            NoiseScheme::Fsrm(k) => write!(f, "fsrm-{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrPoint {
    pub scheme: String,
    pub k: usize,
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub err: f64,
    pub seed: u64,
}

/// Round-channel Choi state for draw `index` of the experiment seeded by `seed`.
pub fn round_choi(scheme: NoiseScheme, d: usize, eps: f64, seed: u64, index: u64) -> Result<ChoiState> {
    let mut rng = SeededStream::new(seed, index);
    let u = sample_cue(d, &mut rng)?;
    let h = sample_gue(d, &mut rng)?;
    match scheme {
        NoiseScheme::Cs => choi_of_cs_round(&u, &h, eps),
        NoiseScheme::Fsrm(k) => choi_of_fsrm_round(&u, &h, eps, k),
    }
}

pub fn ideal_choi(scheme: NoiseScheme, d: usize) -> Result<ChoiState> {
    match scheme {
        NoiseScheme::Cs => Ok(ideal_cs_choi(d)),
        NoiseScheme::Fsrm(k) => ideal_fsrm_choi(d, k),
    }
}

/// Err(N) = ‖N⁻¹ Σ_{i<N} J_i − J_ideal‖₁ at each requested N, using one
/// sequence of draws. Partial sums are formed over fixed chunks in index
/// order, so results do not depend on the worker count.
pub fn err_curve(scheme: NoiseScheme, d: usize, eps: f64, sample_counts: &[usize], seed: u64) -> Result<Vec<ErrPoint>> {
    if sample_counts.is_empty() || sample_counts[0] == 0 || sample_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("sample counts must be positive and strictly ascending".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("noise strength {eps}")));
    }
    let ideal = ideal_choi(scheme, d)?;
    let mut chunks = Vec::new();
    let mut lo = 0;
    for &n in sample_counts {
        while lo < n {
            let hi = (lo + CHUNK).min(n);
            chunks.push((lo, hi));
            lo = hi;
        }
    }
    let dim = ideal.dim();
    let sums = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = ComplexMatrix::zeros(dim, dim);
            for i in lo..hi {
                acc = &acc + &round_choi(scheme, d, eps, seed, i as u64)?.mat;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(sample_counts.len());
    let mut total = ComplexMatrix::zeros(dim, dim);
    let mut targets = sample_counts.iter().peekable();
    for ((_, hi), s) in chunks.iter().zip(&sums) {
        total = &total + s;
        if targets.peek() == Some(&hi) {
            let n = *targets.next().expect("peeked");
            let mean = ChoiState {
                mat: total.scale_real(1.0 / n as f64),
            };
            out.push(ErrPoint {
                scheme: scheme.to_string(),
                k: scheme.k(),
                epsilon: eps,
                n,
                err: mean.trace_distance_to(&ideal)?,
                seed,
            });
        }
    }
    Ok(out)
}
