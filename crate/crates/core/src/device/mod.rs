//! Simulated measurement apparatus: random local unitaries, CM/BM settings,
//! Born-rule sampling, Gaussian unitary noise and imperfect Bell POVMs.

mod povm;

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use povm::{bell_projector, bell_vector, NoisyBellPovm, POVM_PSD_TOL, POVM_SUM_TOL};

use crate::ensembles::{sample_gue, sample_local_unitary, LocalUnitary, SeededStream};
use crate::error::{Error, Result};
use crate::qcore::eigen::herm_expi;
use crate::qcore::matrix::{ComplexMatrix, ZERO};
use crate::qcore::perm::permute_operator_factors;
use crate::qcore::state::DensityMatrix;

const UNITARY_STREAM: u64 = 1;
const SETTING_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const SHOT_STREAM: u64 = 4;

/// Bit of qubit `j` in an `n`-bit outcome; qubit 0 is the most significant bit.
#[inline]
pub fn bit(b: u32, j: usize, n: usize) -> u32 {
    (b >> (n - 1 - j)) & 1
}

pub fn format_bits(b: u32, n: usize) -> String {
    (0..n).map(|j| if bit(b, j, n) == 1 { '1' } else { '0' }).collect()
}

pub fn parse_bits(s: &str) -> Result<u32> {
    if s.is_empty() || s.len() > 32 {
        return Err(Error::Invalid(format!("bit string {s:?}")));
    }
    s.chars().try_fold(0u32, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok(acc << 1 | 1),
        _ => Err(Error::Invalid(format!("bit string {s:?}"))),
    })
}

/// Which qubits are measured in the computational basis and which pairs
/// enter a Bell measurement.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MeasurementSetting {
    s: Vec<bool>,
    pairs: Vec<(usize, usize)>,
}

impl MeasurementSetting {
    /// Pairs the 1-positions of `s` consecutively in ascending order.
    pub fn new(s: Vec<bool>) -> Result<Self> {
        let ones: Vec<usize> = s.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect();
        if ones.len() % 2 != 0 {
            return Err(Error::Invalid(format!(
                "setting {} has odd parity",
                s.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>()
            )));
        }
        let pairs = ones.chunks(2).map(|p| (p[0], p[1])).collect();
        Ok(Self { s, pairs })
    }

    pub fn all_cm(n: usize) -> Self {
        Self {
            s: vec![false; n],
            pairs: Vec::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.s.len()
    }

    pub fn s(&self) -> &[bool] {
        &self.s
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_cm_only(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn cm_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.s.iter().enumerate().filter(|(_, &b)| !b).map(|(j, _)| j)
    }

    /// Measurement blocks in ascending order of their first qubit.
    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::with_capacity(self.s.len());
        for j in 0..self.s.len() {
            if !self.s[j] {
                out.push(Block::Site(j));
            } else if let Some(&(a, b)) = self.pairs.iter().find(|p| p.0 == j) {
                out.push(Block::Pair(a, b));
            }
        }
        out
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.s {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Uniform draw over the 2^{n−1} even-parity settings.
pub fn sample_setting<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MeasurementSetting> {
    if !(2..=32).contains(&n) {
        return Err(Error::Invalid(format!("setting sampling needs 2..=32 qubits, got {n}")));
    }
    let word = rng.next_u64();
    let mut s: Vec<bool> = (0..n - 1).map(|j| (word >> j) & 1 == 1).collect();
    let parity = s.iter().filter(|&&b| b).count() % 2 == 1;
    s.push(parity);
    MeasurementSetting::new(s)
}

#[derive(Clone, Copy, Debug)]
enum Block {
    Site(usize),
    Pair(usize, usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
}

/// Unitary noise Ũ = ⊗ⱼ e^{iεHⱼ} u⁽ʲ⁾ with independent GUE(2) matrices Hⱼ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_true")]
    pub per_round_fixed: bool,
}

fn default_true() -> bool {
    true
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            epsilon: 0.0,
            per_round_fixed: true,
        }
    }

    pub fn gaussian(epsilon: f64, per_round_fixed: bool) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            epsilon,
            per_round_fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("noise strength {} must be finite and >= 0", self.epsilon)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind == NoiseKind::Gaussian && self.epsilon != 0.0
    }

    fn perturb<R: Rng + ?Sized>(&self, u: &LocalUnitary, rng: &mut R) -> Result<LocalUnitary> {
        let kicks = (0..u.n_qubits())
            .map(|_| herm_expi(&sample_gue(2, rng)?, self.epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(u.premultiply(&kicks))
    }
}

/// `out[i,j] = Σ_{a,b} E[b,a] r[(a,i),(b,j)]`: contracts the leading factor of
/// dimension `m` of `r` against the operator `e`.
fn contract_leading(r: &ComplexMatrix, e: &ComplexMatrix, m: usize) -> ComplexMatrix {
    let rest = r.rows() / m;
    let mut out = ComplexMatrix::zeros(rest, rest);
    for a in 0..m {
        for b in 0..m {
            let w = e[(b, a)];
            if w == ZERO {
                continue;
            }
            for i in 0..rest {
                for j in 0..rest {
                    out[(i, j)] += w * r[(a * rest + i, b * rest + j)];
                }
            }
        }
    }
    out
}

/// Keeps the leading qubit at basis value `v`.
fn project_leading_qubit(r: &ComplexMatrix, v: usize) -> ComplexMatrix {
    let rest = r.rows() / 2;
    let mut out = ComplexMatrix::zeros(rest, rest);
    for i in 0..rest {
        for j in 0..rest {
            out[(i, j)] = r[(v * rest + i, v * rest + j)];
        }
    }
    out
}

fn outcome_probabilities(
    r: &ComplexMatrix,
    blocks: &[Block],
    n: usize,
    povm: &NoisyBellPovm,
    prefix: u32,
    out: &mut [f64],
) {
    let Some((first, rest)) = blocks.split_first() else {
        out[prefix as usize] = r[(0, 0)].re;
        return;
    };
    match *first {
        Block::Site(j) => {
            for v in 0..2u32 {
                let sub = project_leading_qubit(r, v as usize);
                outcome_probabilities(&sub, rest, n, povm, prefix | v << (n - 1 - j), out);
            }
        }
        Block::Pair(j, jp) => {
            for beta in 0..4u32 {
                let sub = contract_leading(r, povm.element(beta as usize), 4);
                let bits = (beta >> 1) << (n - 1 - j) | (beta & 1) << (n - 1 - jp);
                outcome_probabilities(&sub, rest, n, povm, prefix | bits, out);
            }
        }
    }
}

/// Outcome distribution of the rotated state `UρU†` under `setting`, indexed
/// by the n-bit outcome (a pair's label β occupies its two positions, first
/// member as the high bit).
pub fn born_probabilities(
    rho: &DensityMatrix,
    u: &LocalUnitary,
    setting: &MeasurementSetting,
    povm: &NoisyBellPovm,
) -> Result<Vec<f64>> {
    let n = rho.n_qubits();
    if u.n_qubits() != n || setting.n_qubits() != n {
        return Err(Error::DimensionMismatch(format!(
            "state has {n} qubits, unitary {}, setting {}",
            u.n_qubits(),
            setting.n_qubits()
        )));
    }
    let rotated = rho.matrix().conjugate_by(&u.full());
    born_from_rotated(&rotated, n, setting, povm)
}

fn born_from_rotated(
    rotated: &ComplexMatrix,
    n: usize,
    setting: &MeasurementSetting,
    povm: &NoisyBellPovm,
) -> Result<Vec<f64>> {
    let blocks = setting.blocks();
    let order: Vec<usize> = blocks
        .iter()
        .flat_map(|b| match *b {
            Block::Site(j) => vec![j],
            Block::Pair(j, jp) => vec![j, jp],
        })
        .collect();
    let reordered;
    let r = if order.iter().enumerate().all(|(i, &q)| i == q) {
        rotated
    } else {
        reordered = permute_operator_factors(rotated, &vec![2; n], &order)?;
        &reordered
    };
    let mut out = vec![0.0; 1 << n];
    outcome_probabilities(r, &blocks, n, povm, 0, &mut out);
    Ok(out)
}

/// Cumulative distribution over clamped probabilities.
struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|&p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        Self { cdf }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let total = *self.cdf.last().expect("non-empty distribution");
        let x = rng.random::<f64>() * total;
        let idx = self.cdf.partition_point(|&c| c <= x);
        idx.min(self.cdf.len() - 1) as u32
    }
}

/// One round of data: the nominal unitary, the setting and the k outcome strings.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub round_id: u64,
    pub unitary: LocalUnitary,
    pub setting: MeasurementSetting,
    pub outcomes: Vec<u32>,
}

impl ShotRecord {
    pub fn n_qubits(&self) -> usize {
        self.setting.n_qubits()
    }
}

/// Draws `k` outcomes for one round. Noise and shot randomness come from
/// separate substreams of `stream`, so ε = 0 reproduces the noiseless device.
pub fn sample_shots(
    rho: &DensityMatrix,
    u: &LocalUnitary,
    setting: &MeasurementSetting,
    k: usize,
    stream: &SeededStream,
    noise: &NoiseModel,
    povm: &NoisyBellPovm,
) -> Result<ShotRecord> {
    if k == 0 {
        return Err(Error::Invalid("at least one shot per round".into()));
    }
    noise.validate()?;
    let mut noise_rng = stream.substream(NOISE_STREAM);
    let mut shot_rng = stream.substream(SHOT_STREAM);
    let outcomes = if noise.is_active() && !noise.per_round_fixed {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let noisy = noise.perturb(u, &mut noise_rng)?;
            let probs = born_probabilities(rho, &noisy, setting, povm)?;
            out.push(Sampler::new(&probs).draw(&mut shot_rng));
        }
        out
    } else {
        let probs = if noise.is_active() {
            born_probabilities(rho, &noise.perturb(u, &mut noise_rng)?, setting, povm)?
        } else {
            born_probabilities(rho, u, setting, povm)?
        };
        let sampler = Sampler::new(&probs);
        (0..k).map(|_| sampler.draw(&mut shot_rng)).collect()
    };
    Ok(ShotRecord {
        round_id: stream.stream_index(),
        unitary: u.clone(),
        setting: setting.clone(),
        outcomes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingMode {
    /// Computational basis on every qubit.
    CmOnly,
    /// Fresh uniformly sampled even-parity setting per round.
    Sampled,
}

#[derive(Clone, Copy, Debug)]
pub struct RoundPlan {
    pub rounds: usize,
    pub shots: usize,
    pub settings: SettingMode,
}

/// Round `round_id` of an experiment seeded by `master_seed`.
pub fn run_round(
    rho: &DensityMatrix,
    plan: &RoundPlan,
    master_seed: u64,
    round_id: u64,
    noise: &NoiseModel,
    povm: &NoisyBellPovm,
) -> Result<ShotRecord> {
    let n = rho.n_qubits();
    let stream = SeededStream::new(master_seed, round_id);
    let u = sample_local_unitary(n, &mut stream.substream(UNITARY_STREAM))?;
    let setting = match plan.settings {
        SettingMode::CmOnly => MeasurementSetting::all_cm(n),
        SettingMode::Sampled => sample_setting(n, &mut stream.substream(SETTING_STREAM))?,
    };
    sample_shots(rho, &u, &setting, plan.shots, &stream, noise, povm)
}

/// All rounds of an experiment, in round order. Each round draws from its own
/// stream, so the result does not depend on the worker count.
pub fn run_rounds(
    rho: &DensityMatrix,
    plan: &RoundPlan,
    master_seed: u64,
    noise: &NoiseModel,
    povm: &NoisyBellPovm,
) -> Result<Vec<ShotRecord>> {
    if plan.rounds == 0 {
        return Err(Error::Invalid("zero rounds".into()));
    }
    (0..plan.rounds as u64)
        .into_par_iter()
        .map(|i| run_round(rho, plan, master_seed, i, noise, povm))
        .collect()
}

/// Rotated-state probability of each basis outcome, ⟨b|UρU†|b⟩.
pub fn computational_probabilities(rotated: &ComplexMatrix) -> Vec<f64> {
    (0..rotated.rows()).map(|i| rotated[(i, i)].re).collect()
}
