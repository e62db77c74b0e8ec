//! Post-processing of shot records into estimates of p₂, p₃ and 𝒩₃ = p₂² − p₃
//! for the few-shot (FSRM), plug-in randomized-measurement (RM) and
//! classical-shadow (CS) schemes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amendment::CoefficientTable;
use crate::device::{bit, run_round, NoiseModel, NoisyBellPovm, RoundPlan, ShotRecord};
use crate::ensembles::LocalUnitary;
use crate::error::{Error, Result};
use crate::qcore::matrix::{ComplexMatrix, C64};
use crate::qcore::state::{DensityMatrix, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    P2,
    P3,
    N3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Fsrm,
    Rm,
    Cs,
}

/// How shots within a round are grouped into k-tuples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Every distinct unordered k-subset of the round's shots.
    #[default]
    All,
    /// Disjoint consecutive groups (shots 0..k, k..2k, ...).
    Consecutive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rounds_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_round_values: Option<Vec<f64>>,
}

impl MomentEstimate {
    /// Mean and sample-std/√R of i.i.d. per-round values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("no usable rounds".into()));
        }
        let (mean, sd) = mean_sd(&values);
        Ok(Self {
            mean,
            std_error: sd / (values.len() as f64).sqrt(),
            rounds_used: values.len(),
            per_round_values: Some(values),
        })
    }

    pub fn without_values(mut self) -> Self {
        self.per_round_values = None;
        self
    }

    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_error
    }
}

/// Mean and unbiased sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Means of `batches` contiguous, near-equal slices of `values`.
pub fn batch_means(values: &[f64], batches: usize) -> Vec<f64> {
    let batches = batches.min(values.len()).max(1);
    let len = values.len();
    (0..batches)
        .map(|b| {
            let (lo, hi) = (b * len / batches, (b + 1) * len / batches);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn hamming_bits(b1: u32, b2: u32) -> u32 {
    (b1 ^ b2).count_ones()
}

pub fn hamming(b1: &str, b2: &str) -> Result<usize> {
    if b1.len() != b2.len() {
        return Err(Error::DimensionMismatch(format!(
            "bit strings of length {} and {}",
            b1.len(),
            b2.len()
        )));
    }
    Ok(b1.chars().zip(b2.chars()).filter(|(a, b)| a != b).count())
}

/// 2ⁿ(−2)^{−h(b₁,b₂)}
pub fn o2(b1: u32, b2: u32, n: usize) -> f64 {
    let h = hamming_bits(b1, b2) as i32;
    (1u64 << n) as f64 * (-2f64).powi(-h)
}

/// 3 if all equal, 2 if exactly two equal, 1 if all distinct.
fn multiplicity<T: PartialEq>(a: T, b: T, c: T) -> i32 {
    match (a == b, b == c, a == c) {
        (true, true, _) => 3,
        (false, false, false) => 1,
        _ => 2,
    }
}

/// 1 + (−2)^{wt−1} on three single bits: 5 when equal, −1 otherwise.
pub fn g_val(b1: u32, b2: u32, b3: u32) -> f64 {
    1.0 + (-2f64).powi(multiplicity(b1, b2, b3) - 1)
}

/// 1 − (−2)^{wt} on three Bell labels: 9, −3 or 3.
pub fn f_val(beta1: u32, beta2: u32, beta3: u32) -> Result<f64> {
    if beta1 > 3 || beta2 > 3 || beta3 > 3 {
        return Err(Error::Invalid(format!("Bell labels ({beta1},{beta2},{beta3}) outside 0..=3")));
    }
    Ok(f_unchecked(beta1, beta2, beta3))
}

fn f_unchecked(a: u32, b: u32, c: u32) -> f64 {
    1.0 - (-2f64).powi(multiplicity(a, b, c))
}

/// Two-bit Bell label of pair `(j, j′)` in outcome `b`, first member as the high bit.
#[inline]
fn pair_label(b: u32, (j, jp): (usize, usize), n: usize) -> u32 {
    bit(b, j, n) << 1 | bit(b, jp, n)
}

/// Per-round evaluator of O₃ for a fixed setting.
struct O3Kernel<'a> {
    n: usize,
    half_sign: f64,
    pairs: &'a [(usize, usize)],
    sites: Vec<usize>,
    coeffs: Option<&'a CoefficientTable>,
}

impl<'a> O3Kernel<'a> {
    fn new(record: &'a ShotRecord, part: &Partition, coeffs: Option<&'a CoefficientTable>) -> Result<Self> {
        let n = record.n_qubits();
        part.check_len(n)?;
        let dot = record
            .setting
            .s()
            .iter()
            .zip(part.bits())
            .filter(|(&s, &a)| s && a)
            .count();
        Ok(Self {
            n,
            half_sign: if dot % 2 == 0 { 0.5 } else { -0.5 },
            pairs: record.setting.pairs(),
            sites: record.setting.cm_sites().collect(),
            coeffs,
        })
    }

    fn eval(&self, x: u32, y: u32, z: u32) -> f64 {
        let mut v = self.half_sign;
        for &j in &self.sites {
            v *= g_val(bit(x, j, self.n), bit(y, j, self.n), bit(z, j, self.n));
        }
        for &p in self.pairs {
            let (a, b, c) = (pair_label(x, p, self.n), pair_label(y, p, self.n), pair_label(z, p, self.n));
            v *= match self.coeffs {
                Some(t) => t.get(a, b, c),
                None => f_unchecked(a, b, c),
            };
        }
        v
    }
}

/// ½(−1)^{a·s} Π_pairs f Π_CM-sites g for a three-shot record. With a
/// coefficient table, each pair's f is replaced by the amended o_{c₁c₂c₃}.
pub fn o3(record: &ShotRecord, part: &Partition, coeffs: Option<&CoefficientTable>) -> Result<f64> {
    if record.outcomes.len() != 3 {
        return Err(Error::Invalid(format!(
            "O3 needs exactly 3 shots, record {} has {}",
            record.round_id,
            record.outcomes.len()
        )));
    }
    let k = O3Kernel::new(record, part, coeffs)?;
    let o = &record.outcomes;
    Ok(k.eval(o[0], o[1], o[2]))
}

/// Distinct outcomes of a round with their multiplicities.
fn histogram(outcomes: &[u32]) -> Vec<(u32, f64)> {
    let mut map = BTreeMap::new();
    for &b in outcomes {
        *map.entry(b).or_insert(0.0) += 1.0;
    }
    map.into_iter().collect()
}

/// Mean of `h` over ordered pairs of distinct shots.
fn pair_u_statistic(outcomes: &[u32], h: impl Fn(u32, u32) -> f64) -> f64 {
    let hist = histogram(outcomes);
    let n = outcomes.len() as f64;
    let mut acc = 0.0;
    for &(x, cx) in &hist {
        for &(y, cy) in &hist {
            let w = cx * (cy - if x == y { 1.0 } else { 0.0 });
            if w != 0.0 {
                acc += w * h(x, y);
            }
        }
    }
    acc / (n * (n - 1.0))
}

/// Mean of `h` over ordered triples of distinct shots.
fn triple_u_statistic(outcomes: &[u32], h: impl Fn(u32, u32, u32) -> f64) -> f64 {
    let hist = histogram(outcomes);
    let n = outcomes.len() as f64;
    let d = |a: u32, b: u32| if a == b { 1.0 } else { 0.0 };
    let mut acc = 0.0;
    for &(x, cx) in &hist {
        for &(y, cy) in &hist {
            let wy = cx * (cy - d(x, y));
            if wy == 0.0 {
                continue;
            }
            for &(z, cz) in &hist {
                let w = wy * (cz - d(x, z) - d(y, z));
                if w != 0.0 {
                    acc += w * h(x, y, z);
                }
            }
        }
    }
    acc / (n * (n - 1.0) * (n - 2.0))
}

fn plugin_pairs(outcomes: &[u32], h: impl Fn(u32, u32) -> f64) -> f64 {
    let hist = histogram(outcomes);
    let n = outcomes.len() as f64;
    let mut acc = 0.0;
    for &(x, cx) in &hist {
        for &(y, cy) in &hist {
            acc += cx * cy * h(x, y);
        }
    }
    acc / (n * n)
}

fn plugin_triples(outcomes: &[u32], h: impl Fn(u32, u32, u32) -> f64) -> f64 {
    let hist = histogram(outcomes);
    let n = outcomes.len() as f64;
    let mut acc = 0.0;
    for &(x, cx) in &hist {
        for &(y, cy) in &hist {
            for &(z, cz) in &hist {
                acc += cx * cy * cz * h(x, y, z);
            }
        }
    }
    acc / (n * n * n)
}

/// Per-round FSRM estimate of p₂ from a CM-only record.
pub fn fsrm_p2_round(record: &ShotRecord, pooling: Pooling) -> Result<f64> {
    let n = record.n_qubits();
    let o = &record.outcomes;
    if !record.setting.is_cm_only() {
        return Err(Error::Invalid(format!("round {} is not computational-basis only", record.round_id)));
    }
    if o.len() < 2 {
        return Err(Error::InsufficientData(format!("round {} has {} shots, need 2", record.round_id, o.len())));
    }
    Ok(match pooling {
        Pooling::All => pair_u_statistic(o, |x, y| o2(x, y, n)),
        Pooling::Consecutive => {
            let groups = o.len() / 2;
            (0..groups).map(|i| o2(o[2 * i], o[2 * i + 1], n)).sum::<f64>() / groups as f64
        }
    })
}

/// Per-round FSRM estimate of p₃.
pub fn fsrm_p3_round(
    record: &ShotRecord,
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> Result<f64> {
    let o = &record.outcomes;
    if o.len() < 3 {
        return Err(Error::InsufficientData(format!("round {} has {} shots, need 3", record.round_id, o.len())));
    }
    let k = O3Kernel::new(record, part, coeffs)?;
    Ok(match pooling {
        Pooling::All => triple_u_statistic(o, |x, y, z| k.eval(x, y, z)),
        Pooling::Consecutive => {
            let groups = o.len() / 3;
            (0..groups).map(|i| k.eval(o[3 * i], o[3 * i + 1], o[3 * i + 2])).sum::<f64>() / groups as f64
        }
    })
}

/// Plug-in Σ_{b,b′} O₂(b,b′) P̂(b)P̂(b′) from the round's empirical distribution.
pub fn rm_p2_round(record: &ShotRecord) -> Result<f64> {
    let n = record.n_qubits();
    if !record.setting.is_cm_only() {
        return Err(Error::Invalid(format!("round {} is not computational-basis only", record.round_id)));
    }
    if record.outcomes.len() < 2 {
        return Err(Error::InsufficientData("plug-in RM needs at least 2 shots per round".into()));
    }
    Ok(plugin_pairs(&record.outcomes, |x, y| o2(x, y, n)))
}

/// Plug-in Σ O₃ P̂P̂P̂ for the round's setting.
pub fn rm_p3_round(record: &ShotRecord, part: &Partition, coeffs: Option<&CoefficientTable>) -> Result<f64> {
    if record.outcomes.len() < 3 {
        return Err(Error::InsufficientData("plug-in RM needs at least 3 shots per round".into()));
    }
    let k = O3Kernel::new(record, part, coeffs)?;
    Ok(plugin_triples(&record.outcomes, |x, y, z| k.eval(x, y, z)))
}

fn per_round<F>(records: &[ShotRecord], f: F) -> Result<Vec<f64>>
where
    F: Fn(&ShotRecord) -> Result<f64> + Sync + Send,
{
    records.par_iter().map(f).collect()
}

fn cm_rounds(records: &[ShotRecord]) -> Vec<ShotRecord> {
    records.iter().filter(|r| r.setting.is_cm_only()).cloned().collect()
}

/// FSRM p₂ from the CM-only rounds of `records`.
pub fn estimate_p2_fsrm(records: &[ShotRecord], pooling: Pooling) -> Result<MomentEstimate> {
    let cm = cm_rounds(records);
    MomentEstimate::from_values(per_round(&cm, |r| fsrm_p2_round(r, pooling))?)
}

pub fn estimate_p3_fsrm(
    records: &[ShotRecord],
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> Result<MomentEstimate> {
    MomentEstimate::from_values(per_round(records, |r| fsrm_p3_round(r, part, coeffs, pooling))?)
}

pub fn estimate_p2_rm(records: &[ShotRecord]) -> Result<MomentEstimate> {
    let cm = cm_rounds(records);
    MomentEstimate::from_values(per_round(&cm, rm_p2_round)?)
}

pub fn estimate_p3_rm(
    records: &[ShotRecord],
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
) -> Result<MomentEstimate> {
    MomentEstimate::from_values(per_round(records, |r| rm_p3_round(r, part, coeffs))?)
}

/// Running sums for 𝒩₃ = p₂² − p₃: per-round p₃ values from every round and
/// p₂ values from CM rounds only.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct N3Accumulator {
    rounds: usize,
    cm: usize,
    sx: f64,
    sxx: f64,
    sxy: f64,
    sy_cm: f64,
    sy: f64,
    syy: f64,
}

impl N3Accumulator {
    pub fn push(&mut self, p2: Option<f64>, p3: f64) {
        self.rounds += 1;
        self.sy += p3;
        self.syy += p3 * p3;
        if let Some(x) = p2 {
            self.cm += 1;
            self.sx += x;
            self.sxx += x * x;
            self.sxy += x * p3;
            self.sy_cm += p3;
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.rounds += o.rounds;
        self.cm += o.cm;
        self.sx += o.sx;
        self.sxx += o.sxx;
        self.sxy += o.sxy;
        self.sy_cm += o.sy_cm;
        self.sy += o.sy;
        self.syy += o.syy;
    }

    /// p₂² is estimated without bias from distinct rounds; the standard error
    /// uses the linearized per-round influence.
    pub fn finish(&self) -> Result<MomentEstimate> {
        if self.cm < 2 || self.rounds < 2 {
            return Err(Error::InsufficientData("n3 needs at least two CM rounds".into()));
        }
        let (k, r) = (self.cm as f64, self.rounds as f64);
        let p2 = self.sx / k;
        let p3 = self.sy / r;
        let p2_sq = (self.sx * self.sx - self.sxx) / (k * (k - 1.0));
        let c = 2.0 * p2 * r / k;
        let saa = c * c * (self.sxx - k * p2 * p2);
        let sab = c * (self.sxy - p3 * self.sx - p2 * self.sy_cm + k * p2 * p3);
        let sbb = self.syy - r * p3 * p3;
        let var = ((saa - 2.0 * sab + sbb) / (r - 1.0)).max(0.0);
        Ok(MomentEstimate {
            mean: p2_sq - p3,
            std_error: (var / r).sqrt(),
            rounds_used: self.rounds,
            per_round_values: None,
        })
    }
}

/// 𝒩₃ from per-round p₂ values (`None` off CM rounds) and p₃ values.
pub fn combine_n3(p2_values: &[Option<f64>], p3_values: &[f64]) -> Result<MomentEstimate> {
    assert_eq!(p2_values.len(), p3_values.len());
    let mut acc = N3Accumulator::default();
    for (&x, &y) in p2_values.iter().zip(p3_values) {
        acc.push(x, y);
    }
    acc.finish()
}

fn fsrm_n3_round(
    r: &ShotRecord,
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> Result<(Option<f64>, f64)> {
    let p2 = if r.setting.is_cm_only() {
        Some(fsrm_p2_round(r, pooling)?)
    } else {
        None
    };
    Ok((p2, fsrm_p3_round(r, part, coeffs, pooling)?))
}

/// FSRM 𝒩₃ computed while simulating, without keeping the shot records.
/// Rounds are reduced in fixed blocks, so the result is thread-count independent.
#[allow(clippy::too_many_arguments)]
pub fn simulate_n3_fsrm(
    rho: &DensityMatrix,
    plan: &RoundPlan,
    master_seed: u64,
    noise: &NoiseModel,
    povm: &NoisyBellPovm,
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> Result<MomentEstimate> {
    const BLOCK: usize = 4096;
    let blocks = plan.rounds.div_ceil(BLOCK);
    let partial = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = N3Accumulator::default();
            for i in b * BLOCK..((b + 1) * BLOCK).min(plan.rounds) {
                let r = run_round(rho, plan, master_seed, i as u64, noise, povm)?;
                let (x, y) = fsrm_n3_round(&r, part, coeffs, pooling)?;
                acc.push(x, y);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = N3Accumulator::default();
    for p in &partial {
        acc.merge(p);
    }
    acc.finish()
}

pub fn estimate_n3_fsrm(
    records: &[ShotRecord],
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
    pooling: Pooling,
) -> Result<MomentEstimate> {
    let pairs: Vec<(Option<f64>, f64)> = records
        .par_iter()
        .map(|r| fsrm_n3_round(r, part, coeffs, pooling))
        .collect::<Result<_>>()?;
    let (p2, p3): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    combine_n3(&p2, &p3)
}

pub fn estimate_n3_rm(
    records: &[ShotRecord],
    part: &Partition,
    coeffs: Option<&CoefficientTable>,
) -> Result<MomentEstimate> {
    let pairs: Vec<(Option<f64>, f64)> = records
        .par_iter()
        .map(|r| {
            let p2 = if r.setting.is_cm_only() { Some(rm_p2_round(r)?) } else { None };
            Ok((p2, rm_p3_round(r, part, coeffs)?))
        })
        .collect::<Result<_>>()?;
    let (p2, p3): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    combine_n3(&p2, &p3)
}

/// Classical-shadow snapshot ⊗ⱼ(3u⁽ʲ⁾†|bⱼ⟩⟨bⱼ|u⁽ʲ⁾ − I₂).
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowSnapshot {
    pub mat: ComplexMatrix,
}

fn snapshot_factor(u: &ComplexMatrix, b: u32) -> ComplexMatrix {
    // 3 u†|b⟩⟨b|u − I
    let row: Vec<C64> = u.row(b as usize).iter().map(|z| z.conj()).collect();
    let mut m = ComplexMatrix::outer(&row, &row).scale_real(3.0);
    m[(0, 0)] -= 1.0;
    m[(1, 1)] -= 1.0;
    m
}

fn snapshot_factors(u: &LocalUnitary, b: u32) -> Vec<ComplexMatrix> {
    let n = u.n_qubits();
    (0..n).map(|j| snapshot_factor(u.factor(j), bit(b, j, n))).collect()
}

pub fn shadow_snapshot(u: &LocalUnitary, b: u32) -> ShadowSnapshot {
    ShadowSnapshot {
        mat: ComplexMatrix::kron_all(&snapshot_factors(u, b)),
    }
}

/// Partial transpose (on the B qubits) of a snapshot, built factor-wise.
pub fn shadow_snapshot_pt(u: &LocalUnitary, b: u32, part: &Partition) -> ComplexMatrix {
    let factors: Vec<ComplexMatrix> = snapshot_factors(u, b)
        .into_iter()
        .enumerate()
        .map(|(j, f)| if part.in_a(j) { f } else { f.transpose() })
        .collect();
    ComplexMatrix::kron_all(&factors)
}

/// Sum of a round's snapshots (optionally partially transposed) and the shot count.
fn round_sums(records: &[ShotRecord], part: Option<&Partition>) -> Result<Vec<(ComplexMatrix, f64)>> {
    records
        .par_iter()
        .filter(|r| r.setting.is_cm_only())
        .map(|r| {
            let dim = 1usize << r.n_qubits();
            let mut acc = ComplexMatrix::zeros(dim, dim);
            for &b in &r.outcomes {
                let snap = match part {
                    Some(p) => shadow_snapshot_pt(&r.unitary, b, p),
                    None => shadow_snapshot(&r.unitary, b).mat,
                };
                acc = &acc + &snap;
            }
            Ok((acc, r.outcomes.len() as f64))
        })
        .collect()
}

/// CS p₂: mean of Tr[ρ̂ᵢρ̂ⱼ] over all pairs of snapshots from different rounds.
pub fn estimate_p2_cs(records: &[ShotRecord]) -> Result<MomentEstimate> {
    let sums = round_sums(records, None)?;
    if sums.len() < 2 {
        return Err(Error::InsufficientData("CS p2 needs snapshots from at least 2 rounds".into()));
    }
    let dim = sums[0].0.rows();
    let mut s = ComplexMatrix::zeros(dim, dim);
    let (mut m, mut m2, mut diag) = (0.0, 0.0, 0.0);
    for (x, c) in &sums {
        s = &s + x;
        m += c;
        m2 += c * c;
        diag += x.trace_product(x).re;
    }
    let mean = (s.trace_product(&s).re - diag) / (m * m - m2);
    let h: Vec<f64> = sums
        .iter()
        .map(|(x, c)| {
            let rest = &s - x;
            x.trace_product(&rest).re / (c * (m - c))
        })
        .collect();
    let (_, sd) = mean_sd(&h);
    Ok(MomentEstimate {
        mean,
        std_error: 2.0 * sd / (h.len() as f64).sqrt(),
        rounds_used: sums.len(),
        per_round_values: None,
    })
}

/// CS p₃: mean of Tr[ρ̂ᵢ^Γ ρ̂ⱼ^Γ ρ̂ₗ^Γ] over all ordered triples of snapshots from
/// pairwise different rounds, summed exactly through power sums.
pub fn estimate_p3_cs(records: &[ShotRecord], part: &Partition) -> Result<MomentEstimate> {
    if let Some(r) = records.first() {
        part.check_len(r.n_qubits())?;
    }
    let sums = round_sums(records, Some(part))?;
    if sums.len() < 3 {
        return Err(Error::InsufficientData("CS p3 needs snapshots from at least 3 rounds".into()));
    }
    let dim = sums[0].0.rows();
    let mut s = ComplexMatrix::zeros(dim, dim);
    let mut p = ComplexMatrix::zeros(dim, dim);
    let (mut m, mut m2, mut m3, mut q) = (0.0, 0.0, 0.0, 0.0);
    let squares: Vec<ComplexMatrix> = sums.par_iter().map(|(x, _)| x.matmul(x)).collect();
    for ((x, c), x2) in sums.iter().zip(&squares) {
        s = &s + x;
        p = &p + x2;
        m += c;
        m2 += c * c;
        m3 += c * c * c;
        q += x2.trace_product(x).re;
    }
    let s2 = s.matmul(&s);
    let total = s2.trace_product(&s).re - 3.0 * p.trace_product(&s).re + 2.0 * q;
    let count = m * m * m - 3.0 * m * m2 + 2.0 * m3;
    let h: Vec<f64> = sums
        .par_iter()
        .zip(&squares)
        .map(|((x, c), x2)| {
            let rest = &s - x;
            let rest_p = &p - x2;
            let inner = &rest.matmul(&rest) - &rest_p;
            let pairs = (m - c) * (m - c) - (m2 - c * c);
            x.trace_product(&inner).re / (c * pairs)
        })
        .collect();
    let (_, sd) = mean_sd(&h);
    Ok(MomentEstimate {
        mean: total / count,
        std_error: 3.0 * sd / (h.len() as f64).sqrt(),
        rounds_used: sums.len(),
        per_round_values: None,
    })
}

/// CS 𝒩₃ = p̂₂² − p̂₃ with a first-order error ignoring the p₂/p₃ covariance.
pub fn estimate_n3_cs(records: &[ShotRecord], part: &Partition) -> Result<MomentEstimate> {
    let p2 = estimate_p2_cs(records)?;
    let p3 = estimate_p3_cs(records, part)?;
    Ok(MomentEstimate {
        mean: p2.mean * p2.mean - p3.mean,
        std_error: (4.0 * p2.mean * p2.mean * p2.std_error.powi(2) + p3.std_error.powi(2)).sqrt(),
        rounds_used: p3.rounds_used,
        per_round_values: None,
    })
}

/// The JSON shape of a reported estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub quantity: Quantity,
    pub mean: f64,
    pub std_error: f64,
    pub rounds: usize,
    pub scheme: Scheme,
}

impl EstimateReport {
    pub fn new(quantity: Quantity, scheme: Scheme, est: &MomentEstimate) -> Self {
        Self {
            quantity,
            mean: est.mean,
            std_error: est.std_error,
            rounds: est.rounds_used,
            scheme,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{parse_bits, MeasurementSetting};
    use crate::ensembles::{sample_local_unitary, SeededStream};
    use crate::qcore::perm::trace_with_factor_permutation;
    use crate::qcore::state::three_copy_slot_permutation;

    fn record(setting: &str, outcomes: &[&str]) -> ShotRecord {
        let s = MeasurementSetting::new(setting.chars().map(|c| c == '1').collect()).unwrap();
        ShotRecord {
            round_id: 0,
            unitary: LocalUnitary::identity(setting.len()),
            setting: s,
            outcomes: outcomes.iter().map(|b| parse_bits(b).unwrap()).collect(),
        }
    }

    fn part(s: &str) -> Partition {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming("00", "00").unwrap(), 0);
        assert_eq!(hamming("01", "10").unwrap(), 2);
        assert_eq!(hamming("0110", "0000").unwrap(), 2);
        assert!(hamming("0", "00").is_err());
    }

    #[test]
    fn o2_examples() {
        assert_eq!(o2(0, 0, 1), 2.0);
        assert_eq!(o2(0, 1, 1), -1.0);
        assert_eq!(o2(0b00, 0b01, 2), -2.0);
        assert_eq!(o2(0b11, 0b11, 2), 4.0);
    }

    #[test]
    fn g_and_f_tables() {
        assert_eq!(g_val(0, 0, 0), 5.0);
        assert_eq!(g_val(0, 0, 1), -1.0);
        assert_eq!(g_val(1, 0, 1), -1.0);
        assert_eq!(g_val(1, 1, 1), 5.0);
        assert_eq!(f_val(0, 0, 0).unwrap(), 9.0);
        assert_eq!(f_val(0, 0, 1).unwrap(), -3.0);
        assert_eq!(f_val(2, 0, 2).unwrap(), -3.0);
        assert_eq!(f_val(0, 1, 2).unwrap(), 3.0);
        assert!(f_val(0, 4, 1).is_err());
    }

    #[test]
    fn o3_examples() {
        let p = part("10");
        assert_eq!(o3(&record("00", &["00", "00", "00"]), &p, None).unwrap(), 12.5);
        assert_eq!(o3(&record("11", &["00", "01", "10"]), &p, None).unwrap(), -1.5);
        assert_eq!(o3(&record("11", &["11", "11", "11"]), &p, None).unwrap(), -4.5);
        assert!(o3(&record("00", &["00", "00"]), &p, None).is_err());
        let table = CoefficientTable::ideal();
        assert_eq!(o3(&record("11", &["11", "11", "11"]), &p, Some(&table)).unwrap(), -4.5);
    }

    #[test]
    fn u_statistics_match_brute_force() {
        let mut rng = SeededStream::new(3, 0);
        use rand::Rng;
        for _ in 0..20 {
            let m = rng.random_range(3..9usize);
            let shots: Vec<u32> = (0..m).map(|_| rng.random_range(0..4u32)).collect();
            let rec = ShotRecord {
                round_id: 0,
                unitary: LocalUnitary::identity(2),
                setting: MeasurementSetting::new(vec![true, true]).unwrap(),
                outcomes: shots.clone(),
            };
            let p = part("10");
            let kernel = O3Kernel::new(&rec, &p, None).unwrap();
            let mut brute3 = 0.0;
            let mut count3 = 0.0;
            let mut brute2 = 0.0;
            let mut count2 = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        brute2 += o2(shots[i], shots[j], 2);
                        count2 += 1.0;
                    }
                    for l in 0..m {
                        if i != j && j != l && i != l {
                            brute3 += kernel.eval(shots[i], shots[j], shots[l]);
                            count3 += 1.0;
                        }
                    }
                }
            }
            let fast3 = fsrm_p3_round(&rec, &p, None, Pooling::All).unwrap();
            assert!((fast3 - brute3 / count3).abs() < 1e-12);
            let fast2 = pair_u_statistic(&shots, |x, y| o2(x, y, 2));
            assert!((fast2 - brute2 / count2).abs() < 1e-12);
        }
    }

    #[test]
    fn p2_round_values() {
        let r = record("00", &["00", "00"]);
        assert_eq!(fsrm_p2_round(&r, Pooling::All).unwrap(), 4.0);
        let r = record("00", &["00", "01"]);
        assert_eq!(fsrm_p2_round(&r, Pooling::All).unwrap(), -2.0);
        assert_eq!(rm_p2_round(&r).unwrap(), 1.0);
        let r = record("00", &["00", "00", "00", "00"]);
        assert_eq!(rm_p2_round(&r).unwrap(), 4.0);
        let r = record("00", &["00", "01", "11", "11"]);
        assert_eq!(fsrm_p2_round(&r, Pooling::Consecutive).unwrap(), (-2.0 + 4.0) / 2.0);
        assert!(fsrm_p2_round(&record("11", &["00", "01"]), Pooling::All).is_err());
    }

    #[test]
    fn snapshot_examples() {
        let s = shadow_snapshot(&LocalUnitary::identity(1), 0);
        assert_eq!(s.mat, ComplexMatrix::diag(&[2.0, -1.0]));
        let mut rng = SeededStream::new(4, 0);
        for b in 0..4 {
            let u = sample_local_unitary(2, &mut rng).unwrap();
            let snap = shadow_snapshot(&u, b);
            assert!((snap.mat.trace().re - 1.0).abs() < 1e-12);
            assert!(snap.mat.is_hermitian(1e-12));
        }
        let two = shadow_snapshot(&LocalUnitary::identity(2), 0).mat;
        assert!((two.trace_product(&two).re - 25.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_triple_contraction_matches_pt_products() {
        let mut rng = SeededStream::new(5, 0);
        let p = part("10");
        let snaps: Vec<(LocalUnitary, u32)> =
            (0..3).map(|b| (sample_local_unitary(2, &mut rng).unwrap(), b as u32)).collect();
        let mats: Vec<ComplexMatrix> = snaps.iter().map(|(u, b)| shadow_snapshot(u, *b).mat).collect();
        let three = mats[0].kron(&mats[1]).kron(&mats[2]);
        let direct = trace_with_factor_permutation(&three, &[2; 6], &three_copy_slot_permutation(&p)).unwrap();
        let pts: Vec<ComplexMatrix> = snaps.iter().map(|(u, b)| shadow_snapshot_pt(u, *b, &p)).collect();
        let fwd = pts[0].matmul(&pts[1]).trace_product(&pts[2]);
        let bwd = pts[0].matmul(&pts[2]).trace_product(&pts[1]);
        assert!((direct - fwd).norm() < 1e-9 || (direct - bwd).norm() < 1e-9);
    }

    #[test]
    fn cs_sums_match_brute_force() {
        let mut rng = SeededStream::new(6, 0);
        let p = part("10");
        let records: Vec<ShotRecord> = (0..6)
            .map(|i| ShotRecord {
                round_id: i,
                unitary: sample_local_unitary(2, &mut rng).unwrap(),
                setting: MeasurementSetting::all_cm(2),
                outcomes: if i % 2 == 0 { vec![i as u32 % 4] } else { vec![1, 2] },
            })
            .collect();
        let snaps: Vec<(usize, ComplexMatrix, ComplexMatrix)> = records
            .iter()
            .enumerate()
            .flat_map(|(r, rec)| {
                let p = &p;
                rec.outcomes
                    .iter()
                    .map(move |&b| (r, shadow_snapshot(&rec.unitary, b).mat, shadow_snapshot_pt(&rec.unitary, b, p)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let (mut s2, mut c2, mut s3, mut c3) = (0.0, 0.0, 0.0, 0.0);
        for a in &snaps {
            for b in &snaps {
                if a.0 == b.0 {
                    continue;
                }
                s2 += a.1.trace_product(&b.1).re;
                c2 += 1.0;
                for c in &snaps {
                    if c.0 == a.0 || c.0 == b.0 {
                        continue;
                    }
                    s3 += a.2.matmul(&b.2).trace_product(&c.2).re;
                    c3 += 1.0;
                }
            }
        }
        assert!((estimate_p2_cs(&records).unwrap().mean - s2 / c2).abs() < 1e-10);
        assert!((estimate_p3_cs(&records, &p).unwrap().mean - s3 / c3).abs() < 1e-10);
    }

    #[test]
    fn n3_combination_is_consistent() {
        let p2 = vec![Some(1.0), None, Some(3.0), None];
        let p3 = vec![0.5, 0.5, 0.5, 0.5];
        let est = combine_n3(&p2, &p3).unwrap();
        // distinct-round p2²: (4² − 10)/2 = 3
        assert!((est.mean - 2.5).abs() < 1e-12);
        assert!(combine_n3(&[Some(1.0), None], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn batch_means_cover_all_values() {
        let v: Vec<f64> = (0..10).map(|x| x as f64).collect();
        let b = batch_means(&v, 3);
        assert_eq!(b.len(), 3);
        assert_eq!(b, vec![1.0, 4.0, 7.5]);
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!((m, sd), (2.0, 1.0));
    }

    #[test]
    fn report_json_shape() {
        let est = MomentEstimate::from_values(vec![1.0, 3.0]).unwrap();
        let rep = EstimateReport::new(Quantity::P2, Scheme::Fsrm, &est);
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["quantity"], "p2");
        assert_eq!(v["scheme"], "fsrm");
        assert_eq!(v["rounds"], 2);
        assert_eq!(v["mean"], 2.0);
    }
}
