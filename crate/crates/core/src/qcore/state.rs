use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::eigen::{hermitian_eigenvalues, trace_norm};
use super::matrix::{ComplexMatrix, C64, ZERO};
use super::perm::{trace_with_factor_permutation, CYCLE_BACKWARD, CYCLE_FORWARD};
use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
pub const MAX_QUBITS: usize = 12;

/// An n-qubit mixed state. Qubit 0 is the most significant bit of a basis index.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    n_qubits: usize,
    mat: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(n_qubits: usize, mat: ComplexMatrix) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::InvalidState(format!("unsupported qubit count {n_qubits}")));
        }
        let dim = 1usize << n_qubits;
        if mat.rows() != dim || mat.cols() != dim {
            return Err(Error::InvalidState(format!(
                "{n_qubits} qubits need a {dim}x{dim} matrix, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        if !mat.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = mat.hermiticity_defect();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:.3e})")));
        }
        let tr = mat.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {:.12} differs from 1", tr.re)));
        }
        let min = hermitian_eigenvalues(&mat)?[0];
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(Self { n_qubits, mat })
    }

    /// Normalizes a PSD matrix by its trace.
    pub fn from_unnormalized(n_qubits: usize, mat: ComplexMatrix) -> Result<Self> {
        let tr = mat.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidState("zero trace".into()));
        }
        Self::new(n_qubits, mat.hermitian_part().scale_real(1.0 / tr))
    }

    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let dim = amplitudes.len();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::InvalidState(format!("state vector length {dim}")));
        }
        let norm: f64 = amplitudes.iter().map(C64::norm_sqr).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let v: Vec<C64> = amplitudes.iter().map(|a| a / norm).collect();
        Self::new(dim.trailing_zeros() as usize, ComplexMatrix::outer(&v, &v))
    }

    /// |Φ⁺⟩ = (|00⟩ + |11⟩)/√2
    pub fn bell_phi_plus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let one = C64::new(s, 0.0);
        Self::pure(&[one, ZERO, ZERO, one]).expect("valid Bell state")
    }

    /// p|Φ⁺⟩⟨Φ⁺| + (1−p) I/4
    pub fn werner(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidState(format!("Werner parameter {p} outside [0,1]")));
        }
        let bell = Self::bell_phi_plus().mat;
        let mixed = ComplexMatrix::identity(4).scale_real(0.25);
        let mat = &bell.scale_real(p) + &mixed.scale_real(1.0 - p);
        Self::new(2, mat)
    }

    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        Self::new(n_qubits, ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// |0…0⟩⟨0…0|
    pub fn product_zero(n_qubits: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        Self::new(n_qubits, ComplexMatrix::unit(dim, 0, 0))
    }

    /// Random state ρ = GG†/Tr(GG†) with G a 2ⁿ×rank complex Ginibre matrix.
    pub fn random(n_qubits: usize, rank: usize, seed: u64) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if rank == 0 || rank > dim {
            return Err(Error::InvalidState(format!("rank {rank} for dimension {dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ComplexMatrix::zeros(dim, rank);
        for z in g.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z = C64::new(re, im);
        }
        Self::from_unnormalized(n_qubits, g.matmul(&g.dagger()))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn purity(&self) -> f64 {
        self.mat.trace_product(&self.mat).re
    }
}

/// Bipartition of the qubits: `true` puts the qubit in subsystem A, `false` in B.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    bits: Vec<bool>,
}

impl Partition {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// First `n_a` qubits in A, the rest in B.
    pub fn split(n_qubits: usize, n_a: usize) -> Self {
        Self::new((0..n_qubits).map(|j| j < n_a).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn in_a(&self, qubit: usize) -> bool {
        self.bits[qubit]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self::new(self.bits.iter().map(|b| !b).collect())
    }

    pub fn check_len(&self, n_qubits: usize) -> Result<()> {
        if self.bits.len() != n_qubits {
            return Err(Error::DimensionMismatch(format!(
                "partition of length {} for {n_qubits} qubits",
                self.bits.len()
            )));
        }
        Ok(())
    }

    /// Both A and B non-empty.
    pub fn check_bipartite(&self) -> Result<()> {
        if self.bits.iter().all(|&b| b) || self.bits.iter().all(|&b| !b) {
            return Err(Error::Invalid(format!("partition {self} leaves a side empty")));
        }
        Ok(())
    }

    /// Bitmask (basis-index bit positions) of the B qubits.
    fn b_mask(&self) -> usize {
        let n = self.bits.len();
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &a)| !a)
            .fold(0, |m, (j, _)| m | 1 << (n - 1 - j))
    }
}

impl FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(Error::Invalid(format!("partition string {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if bits.is_empty() {
            return Err(Error::Invalid("empty partition".into()));
        }
        Ok(Self::new(bits))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Transpose on the B qubits of an n-qubit operator.
pub fn partial_transpose_matrix(m: &ComplexMatrix, part: &Partition) -> Result<ComplexMatrix> {
    let n = part.len();
    let dim = 1usize << n;
    if m.rows() != dim || m.cols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "partition of {n} qubits for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let mask = part.b_mask();
    let mut out = ComplexMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let ni = (i & !mask) | (j & mask);
            let nj = (j & !mask) | (i & mask);
            out[(ni, nj)] = m[(i, j)];
        }
    }
    Ok(out)
}

pub fn partial_transpose(rho: &DensityMatrix, part: &Partition) -> Result<ComplexMatrix> {
    part.check_len(rho.n_qubits())?;
    partial_transpose_matrix(rho.matrix(), part)
}

/// Σ|λ| over the negative eigenvalues of ρ^{T_B}.
pub fn negativity(rho: &DensityMatrix, part: &Partition) -> Result<f64> {
    let pt = partial_transpose(rho, part)?;
    Ok(hermitian_eigenvalues(&pt)?
        .into_iter()
        .filter(|&x| x < 0.0)
        .fold(0.0, |acc, x| acc - x))
}

/// Tr[(ρ^{T_B})^k] by explicit matrix powers.
pub fn exact_pt_moment(rho: &DensityMatrix, part: &Partition, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("moment order must be at least 1".into()));
    }
    let pt = partial_transpose(rho, part)?;
    Ok(pt.powi(k).trace().re)
}

/// Tr[W_→^A ⊗ W_←^B X], X an operator on three copies of the n-qubit space
/// ordered copy-major.
pub fn three_copy_pt_contraction(x: &ComplexMatrix, part: &Partition) -> Result<C64> {
    let n = part.len();
    let perm = three_copy_slot_permutation(part);
    trace_with_factor_permutation(x, &vec![2; 3 * n], &perm)
}

/// Slot permutation of W_→^A ⊗ W_←^B on 3n qubit slots (copy-major order).
pub fn three_copy_slot_permutation(part: &Partition) -> Vec<usize> {
    let n = part.len();
    let mut perm = vec![0; 3 * n];
    for c in 0..3 {
        for j in 0..n {
            let src_copy = if part.in_a(j) {
                CYCLE_FORWARD[c]
            } else {
                CYCLE_BACKWARD[c]
            };
            perm[c * n + j] = src_copy * n + j;
        }
    }
    perm
}

/// p₂² − p₃; positive values certify NPT entanglement.
pub fn p3_ppt_value(p2: f64, p3: f64) -> f64 {
    p2 * p2 - p3
}

pub fn matrix_trace_norm(m: &ComplexMatrix) -> Result<f64> {
    trace_norm(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(s: &str) -> Partition {
        s.parse().unwrap()
    }

    #[test]
    fn diagonal_state_is_pt_invariant() {
        let rho = DensityMatrix::product_zero(2).unwrap();
        for p in ["10", "01", "11", "00"] {
            assert_eq!(&partial_transpose(&rho, &part(p)).unwrap(), rho.matrix());
        }
    }

    #[test]
    fn bell_pt_spectrum() {
        let pt = partial_transpose(&DensityMatrix::bell_phi_plus(), &part("10")).unwrap();
        let vals = hermitian_eigenvalues(&pt).unwrap();
        for (a, b) in vals.iter().zip([-0.5, 0.5, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pt_is_an_involution() {
        for seed in 0..20 {
            let rho = DensityMatrix::random(2, 1 + (seed as usize % 4), seed).unwrap();
            let p = part("10");
            let once = partial_transpose(&rho, &p).unwrap();
            assert!(once.is_hermitian(1e-12));
            let twice = partial_transpose_matrix(&once, &p).unwrap();
            assert!(twice.max_abs_diff(rho.matrix()) < 1e-15);
        }
    }

    #[test]
    fn negativity_examples() {
        let p = part("10");
        assert!((negativity(&DensityMatrix::bell_phi_plus(), &p).unwrap() - 0.5).abs() < 1e-12);
        assert!(negativity(&DensityMatrix::maximally_mixed(2).unwrap(), &p).unwrap().abs() < 1e-15);
        let w = DensityMatrix::werner(0.5).unwrap();
        assert!((negativity(&w, &p).unwrap() - 0.125).abs() < 1e-12);
        let w = DensityMatrix::werner(1.0 / 3.0).unwrap();
        assert!(negativity(&w, &p).unwrap() < 1e-12);
    }

    #[test]
    fn moment_examples() {
        let p = part("10");
        let bell = DensityMatrix::bell_phi_plus();
        assert!((exact_pt_moment(&bell, &p, 3).unwrap() - 0.25).abs() < 1e-12);
        assert!((exact_pt_moment(&bell, &p, 1).unwrap() - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        assert!((exact_pt_moment(&mixed, &p, 3).unwrap() - 0.0625).abs() < 1e-15);
        let prod = DensityMatrix::product_zero(2).unwrap();
        for k in 1..5 {
            assert!((exact_pt_moment(&prod, &p, k).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn second_moment_is_purity_for_every_partition() {
        for seed in 0..20 {
            let rho = DensityMatrix::random(3, 1 + (seed as usize % 8), 100 + seed).unwrap();
            for p in ["100", "010", "001", "110", "101"] {
                let p2 = exact_pt_moment(&rho, &part(p), 2).unwrap();
                assert!((p2 - rho.purity()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn moments_match_spectral_power_sums() {
        for seed in 0..10 {
            let rho = DensityMatrix::random(2, 2, 200 + seed).unwrap();
            let p = part("10");
            let spec = hermitian_eigenvalues(&partial_transpose(&rho, &p).unwrap()).unwrap();
            for k in 1..=4u32 {
                let via_power = exact_pt_moment(&rho, &p, k).unwrap();
                let via_spec: f64 = spec.iter().map(|x| x.powi(k as i32)).sum();
                assert!((via_power - via_spec).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn negativity_flags_negative_pt_eigenvalue() {
        for seed in 0..20 {
            let rho = DensityMatrix::random(2, 1 + (seed as usize % 4), 300 + seed).unwrap();
            let p = part("10");
            let min = hermitian_eigenvalues(&partial_transpose(&rho, &p).unwrap()).unwrap()[0];
            let neg = negativity(&rho, &p).unwrap();
            assert_eq!(neg > 0.0, min < -1e-9, "seed {seed}: min {min}, neg {neg}");
        }
    }

    #[test]
    fn explicit_three_copy_contraction_equals_third_moment() {
        for seed in 0..10 {
            let rho = DensityMatrix::random(2, 1 + (seed as usize % 4), 400 + seed).unwrap();
            let p = part("10");
            let m = rho.matrix();
            let three = m.kron(m).kron(m);
            assert_eq!(three.dim(), 64);
            let via_w = three_copy_pt_contraction(&three, &p).unwrap();
            let direct = exact_pt_moment(&rho, &p, 3).unwrap();
            assert!((via_w.re - direct).abs() < 1e-8);
            assert!(via_w.im.abs() < 1e-12);
        }
    }

    #[test]
    fn p3_ppt_examples() {
        assert!((p3_ppt_value(1.0, 0.25) - 0.75).abs() < 1e-15);
        assert!((p3_ppt_value(0.858, 0.3580) - 0.378164).abs() < 1e-12);
        assert_eq!(p3_ppt_value(0.25, 0.0625), 0.0);
    }

    #[test]
    fn validation_errors() {
        let bad = ComplexMatrix::diag(&[0.6, 0.6, -0.1, -0.1]);
        assert!(DensityMatrix::new(2, bad).is_err());
        let wrong_dim = ComplexMatrix::identity(3).scale_real(1.0 / 3.0);
        assert!(DensityMatrix::new(2, wrong_dim).is_err());
        let rho = DensityMatrix::bell_phi_plus();
        assert!(partial_transpose(&rho, &part("100")).is_err());
        assert!(part("11").check_bipartite().is_err());
        assert!("1x".parse::<Partition>().is_err());
    }

    #[test]
    fn trace_norm_of_state_is_one() {
        let rho = DensityMatrix::random(2, 3, 9).unwrap();
        assert!((matrix_trace_norm(rho.matrix()).unwrap() - 1.0).abs() < 1e-12);
        let diff = rho.matrix() - rho.matrix();
        assert_eq!(matrix_trace_norm(&diff).unwrap(), 0.0);
    }
}
