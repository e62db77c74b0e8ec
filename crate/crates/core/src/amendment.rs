//! Bell-measurement error amendment.
//!
//! A noisy pair POVM {M_c} is corrected by choosing real coefficients
//! o_{c₁c₂c₃} such that O = Σ o_c M_{c₁}⊗M_{c₂}⊗M_{c₃} has the same local
//! three-fold twirl as T = M₋^A⊗M₋^B. Twirl equality is equivalent to equal
//! overlaps with every W_{σ_A}⊗W_{σ_B}, (σ_A, σ_B) ∈ S₃×S₃, which gives a
//! 36×64 linear system.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::NoisyBellPovm;
use crate::error::{Error, Result};
use crate::estimators::f_val;
use crate::io::{read_json, write_json, BELL_LABELS};
use crate::qcore::eigen::hermitian_pinv;
use crate::qcore::matrix::{ComplexMatrix, C64};
use crate::qcore::perm::{
    all_permutations, compose, cycle_count, factor_permutation_map, inverse, permutation_matrix,
    permute_operator_factors, trace_with_factor_permutation, CYCLE_BACKWARD, CYCLE_FORWARD,
};

pub const DEFAULT_CEILING: f64 = 1e-6;
const PINV_CUTOFF: f64 = 1e-12;

/// Gram matrix of the permutation operators on (C^d)^{⊗k}, its
/// (pseudo-)inverse and the bound constant K.
#[derive(Clone, Debug)]
pub struct WeingartenData {
    pub k: usize,
    pub d: usize,
    pub perms: Vec<Vec<usize>>,
    pub gram: Vec<Vec<f64>>,
    pub wg: Vec<Vec<f64>>,
    /// max_σ Σ_π |c_{σπ}|
    pub k_bound: f64,
}

impl WeingartenData {
    /// K for a twirl acting independently on two subsystems.
    pub fn two_sided_k(&self) -> f64 {
        self.k_bound * self.k_bound
    }
}

/// Gram entries G_{σπ} = d^{#cycles(σπ⁻¹)}. For d < k the permutation
/// operators are linearly dependent, G is singular and `wg` is its
/// Moore–Penrose pseudo-inverse.
pub fn weingarten(k: usize, d: usize) -> Result<WeingartenData> {
    if !(1..=3).contains(&k) || d < 2 {
        return Err(Error::Invalid(format!("Weingarten data for k={k}, d={d} is not supported")));
    }
    let perms = all_permutations(k);
    let m = perms.len();
    let gram: Vec<Vec<f64>> = perms
        .iter()
        .map(|s| {
            perms
                .iter()
                .map(|p| (d as f64).powi(cycle_count(&compose(s, &inverse(p))) as i32))
                .collect()
        })
        .collect();
    let mut g = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = C64::new(gram[i][j], 0.0);
        }
    }
    let pinv = hermitian_pinv(&g, PINV_CUTOFF)?;
    let wg: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| pinv[(i, j)].re).collect()).collect();
    let k_bound = wg
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(WeingartenData {
        k,
        d,
        perms,
        gram,
        wg,
        k_bound,
    })
}

/// Haar k-fold twirl 𝔼_U U^{⊗k} A U^{†⊗k}: the orthogonal projection of `A`
/// onto the span of the permutation operators.
pub fn twirl_operator(a: &ComplexMatrix, w: &WeingartenData) -> Result<ComplexMatrix> {
    let dim = w.d.pow(w.k as u32);
    if a.rows() != dim || a.cols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "twirl on {} copies of C^{} needs a {dim}x{dim} operator, got {}x{}",
            w.k,
            w.d,
            a.rows(),
            a.cols()
        )));
    }
    let dims = vec![w.d; w.k];
    // b_σ = Tr[W_σ† A] = Σ_i A[map_σ(i), i]
    let maps = w
        .perms
        .iter()
        .map(|p| factor_permutation_map(&dims, p))
        .collect::<Result<Vec<_>>>()?;
    let b: Vec<C64> = maps
        .iter()
        .map(|map| (0..dim).map(|i| a[(map[i], i)]).sum())
        .collect();
    let mut out = ComplexMatrix::zeros(dim, dim);
    for (pi, map) in maps.iter().enumerate() {
        let x: C64 = w.wg[pi].iter().zip(&b).map(|(c, bs)| bs * c).sum();
        for (src, &dst) in map.iter().enumerate() {
            out[(dst, src)] += x;
        }
    }
    Ok(out)
}

/// M₊ = W_→ + W_← on three copies of one qubit.
pub fn m_plus() -> ComplexMatrix {
    let f = permutation_matrix(&CYCLE_FORWARD, 2, 3).expect("valid").mat;
    let b = permutation_matrix(&CYCLE_BACKWARD, 2, 3).expect("valid").mat;
    &f + &b
}

/// M₋ = W_→ − W_← on three copies of one qubit.
pub fn m_minus() -> ComplexMatrix {
    let f = permutation_matrix(&CYCLE_FORWARD, 2, 3).expect("valid").mat;
    let b = permutation_matrix(&CYCLE_BACKWARD, 2, 3).expect("valid").mat;
    &f - &b
}

/// T = M₋^A ⊗ M₋^B in side-major order (A₁A₂A₃)(B₁B₂B₃).
pub fn build_m_minus_target() -> ComplexMatrix {
    let m = m_minus();
    m.kron(&m)
}

/// Side-major slot order from copy-major (A₁B₁)(A₂B₂)(A₃B₃).
const SIDE_MAJOR: [usize; 6] = [0, 2, 4, 1, 3, 5];

/// Reorders an operator on three copies of a qubit pair from copy-major
/// (A₁B₁)(A₂B₂)(A₃B₃) to side-major (A₁A₂A₃)(B₁B₂B₃).
pub fn to_side_major(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    permute_operator_factors(x, &[2; 6], &SIDE_MAJOR)
}

/// Slot permutation of W_{σ_A}⊗W_{σ_B} on the side-major 6-qubit space.
fn two_sided_perm(sa: &[usize], sb: &[usize]) -> Vec<usize> {
    sa.iter().copied().chain(sb.iter().map(|&x| 3 + x)).collect()
}

#[inline]
pub fn coeff_index(c1: u32, c2: u32, c3: u32) -> usize {
    (c1 as usize) << 4 | (c2 as usize) << 2 | c3 as usize
}

/// Rows indexed by (σ_A, σ_B) ∈ S₃×S₃ (lexicographic), columns by
/// c = (c₁,c₂,c₃) ∈ {0..3}³ via [`coeff_index`].
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub rows: Vec<(Vec<usize>, Vec<usize>)>,
    /// `a[row][c] = Tr[(M_{c₁}⊗M_{c₂}⊗M_{c₃}) · W_{σ_A}⊗W_{σ_B}]`
    pub a: Vec<Vec<C64>>,
    /// `b[row] = Tr[T · W_{σ_A}⊗W_{σ_B}]`
    pub b: Vec<C64>,
}

impl LinearSystem {
    pub fn apply(&self, x: &[f64]) -> Vec<C64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// Σ_rows |(A x − b)_row|
    pub fn l1_residual(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(&self.b).map(|(ax, b)| (ax - b).norm()).sum()
    }
}

pub fn build_linear_system(povm: &NoisyBellPovm) -> Result<LinearSystem> {
    let perms = all_permutations(3);
    let mut rows = Vec::with_capacity(36);
    let mut slot_perms = Vec::with_capacity(36);
    for sa in &perms {
        for sb in &perms {
            rows.push((sa.clone(), sb.clone()));
            slot_perms.push(two_sided_perm(sa, sb));
        }
    }
    let target = build_m_minus_target();
    let b = slot_perms
        .iter()
        .map(|p| trace_with_factor_permutation(&target, &[2; 6], p))
        .collect::<Result<Vec<_>>>()?;

    let mut a = vec![vec![C64::new(0.0, 0.0); 64]; rows.len()];
    for c1 in 0..4u32 {
        for c2 in 0..4u32 {
            let m12 = povm.element(c1 as usize).kron(povm.element(c2 as usize));
            for c3 in 0..4u32 {
                let op = to_side_major(&m12.kron(povm.element(c3 as usize)))?;
                let col = coeff_index(c1, c2, c3);
                for (r, p) in slot_perms.iter().enumerate() {
                    a[r][col] = trace_with_factor_permutation(&op, &[2; 6], p)?;
                }
            }
        }
    }
    Ok(LinearSystem { rows, a, b })
}

/// Amended pair coefficients o_{c₁c₂c₃}, the L1 residual of the solve and the
/// fingerprint of the POVM they were solved for.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub povm_hash: String,
}

impl CoefficientTable {
    /// The f-table 1 − (−2)^{wt}, which amends the ideal Bell measurement.
    pub fn ideal() -> Self {
        let mut coeffs = vec![0.0; 64];
        for c1 in 0..4 {
            for c2 in 0..4 {
                for c3 in 0..4 {
                    coeffs[coeff_index(c1, c2, c3)] = f_val(c1, c2, c3).expect("labels in range");
                }
            }
        }
        Self {
            coeffs,
            residual: 0.0,
            povm_hash: NoisyBellPovm::ideal().fingerprint(),
        }
    }

    #[inline]
    pub fn get(&self, c1: u32, c2: u32, c3: u32) -> f64 {
        self.coeffs[coeff_index(c1, c2, c3)]
    }

    pub fn key(c1: u32, c2: u32, c3: u32) -> String {
        format!(
            "{}|{}|{}",
            BELL_LABELS[c1 as usize], BELL_LABELS[c2 as usize], BELL_LABELS[c3 as usize]
        )
    }

    pub fn to_file(&self) -> CoefficientFile {
        let mut coeffs = BTreeMap::new();
        for c1 in 0..4 {
            for c2 in 0..4 {
                for c3 in 0..4 {
                    coeffs.insert(Self::key(c1, c2, c3), self.get(c1, c2, c3));
                }
            }
        }
        CoefficientFile {
            povm_hash: self.povm_hash.clone(),
            residual: self.residual,
            coeffs,
        }
    }

    pub fn from_file(file: CoefficientFile) -> Result<Self> {
        if !(file.residual >= 0.0) {
            return Err(Error::Invalid(format!("negative residual {}", file.residual)));
        }
        let mut coeffs = vec![f64::NAN; 64];
        for (key, value) in &file.coeffs {
            let labels: Vec<usize> = key
                .split('|')
                .map(|l| BELL_LABELS.iter().position(|b| *b == l))
                .collect::<Option<Vec<_>>>()
                .filter(|v| v.len() == 3)
                .ok_or_else(|| Error::Invalid(format!("coefficient key {key:?}")))?;
            coeffs[labels[0] << 4 | labels[1] << 2 | labels[2]] = *value;
        }
        if let Some(missing) = coeffs.iter().position(|x| !x.is_finite()) {
            let (c1, c2, c3) = ((missing >> 4) as u32, (missing >> 2 & 3) as u32, (missing & 3) as u32);
            return Err(Error::Invalid(format!(
                "coefficient {} missing or not finite",
                Self::key(c1, c2, c3)
            )));
        }
        Ok(Self {
            coeffs,
            residual: file.residual,
            povm_hash: file.povm_hash,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file(read_json(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFile {
    pub povm_hash: String,
    pub residual: f64,
    pub coeffs: BTreeMap<String, f64>,
}

/// Real least-squares form [Re A; Im A] x = [Re b; Im b].
fn stacked(sys: &LinearSystem, weights: Option<&[f64]>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = Vec::with_capacity(2 * sys.a.len());
    let mut b = Vec::with_capacity(2 * sys.b.len());
    for (r, (row, rhs)) in sys.a.iter().zip(&sys.b).enumerate() {
        let w = weights.map_or(1.0, |w| w[r]);
        a.push(row.iter().map(|z| w * z.re).collect());
        b.push(w * rhs.re);
        a.push(row.iter().map(|z| w * z.im).collect());
        b.push(w * rhs.im);
    }
    (a, b)
}

/// Least squares solution closest to `x0`: x = x0 + Aᵀ(AAᵀ)⁺(b − A x0),
/// with iterative refinement.
fn min_norm_lstsq(a: &[Vec<f64>], b: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), a[0].len());
    let mut gram = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
            gram[(i, j)] = C64::new(s, 0.0);
            gram[(j, i)] = C64::new(s, 0.0);
        }
    }
    let pinv = hermitian_pinv(&gram, 1e-13)?;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let y: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| pinv[(i, j)].re * rhs[j]).sum())
            .collect();
        (0..n).map(|c| (0..m).map(|r| a[r][c] * y[r]).sum()).collect()
    };
    let mut x = x0.to_vec();
    for _ in 0..6 {
        let resid: Vec<f64> = (0..m)
            .map(|r| b[r] - a[r].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let dx = solve(&resid);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }
    Ok(x)
}

/// Solves for amended coefficients minimizing the L1 residual
/// Σ_{σ_A,σ_B} |Tr[O W] − Tr[T W]|. Starts from the least-squares solution
/// nearest the ideal f-table and, when that leaves a residual, refines it by
/// iteratively reweighted least squares.
pub fn solve_coefficients(sys: &LinearSystem, ceiling: f64, povm_hash: &str) -> Result<CoefficientTable> {
    let (a, b) = stacked(sys, None);
    let anchor = CoefficientTable::ideal().coeffs;
    let mut best = min_norm_lstsq(&a, &b, &anchor)?;
    let mut best_res = sys.l1_residual(&best);
    if best_res > 1e-3 * ceiling {
        for _ in 0..50 {
            let r: Vec<f64> = sys
                .apply(&best)
                .iter()
                .zip(&sys.b)
                .map(|(ax, b)| (ax - b).norm())
                .collect();
            let floor = 1e-12 * (1.0 + r.iter().cloned().fold(0.0, f64::max));
            let w: Vec<f64> = r.iter().map(|x| 1.0 / x.max(floor).sqrt()).collect();
            let (aw, bw) = stacked(sys, Some(&w));
            let x = min_norm_lstsq(&aw, &bw, &anchor)?;
            let res = sys.l1_residual(&x);
            if res < best_res {
                best_res = res;
                best = x;
            } else {
                break;
            }
        }
    }
    if !(best_res <= ceiling) {
        return Err(Error::SolverCeiling {
            residual: best_res,
            ceiling,
        });
    }
    Ok(CoefficientTable {
        coeffs: best,
        residual: best_res,
        povm_hash: povm_hash.to_string(),
    })
}

/// Build and solve the amendment system for `povm`.
pub fn amend(povm: &NoisyBellPovm, ceiling: f64) -> Result<CoefficientTable> {
    let sys = build_linear_system(povm)?;
    solve_coefficients(&sys, ceiling, &povm.fingerprint())
}

/// Operator-error bound K·residual.
pub fn error_bound(residual: f64, k_two_sided: f64) -> f64 {
    k_two_sided * residual
}
