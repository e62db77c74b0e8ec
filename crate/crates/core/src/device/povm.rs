use sha2::{Digest, Sha256};

use crate::ensembles::{sample_gue, SeededStream};
use crate::error::{Error, Result};
use crate::qcore::eigen::{herm_expi, hermitian_eigenvalues};
use crate::qcore::matrix::{ComplexMatrix, C64, ZERO};

pub const POVM_PSD_TOL: f64 = 1e-9;
pub const POVM_SUM_TOL: f64 = 1e-8;

/// Bell state with the given two-bit label: (CNOT₀₁)(H⊗I)|label⟩.
/// Φ⁺ ↦ 00, Ψ⁺ ↦ 01, Φ⁻ ↦ 10, Ψ⁻ ↦ 11.
pub fn bell_vector(label: usize) -> [C64; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (p, m) = (C64::new(s, 0.0), C64::new(-s, 0.0));
    match label {
        0 => [p, ZERO, ZERO, p],
        1 => [ZERO, p, p, ZERO],
        2 => [p, ZERO, ZERO, m],
        3 => [ZERO, p, m, ZERO],
        _ => panic!("Bell label {label} out of range"),
    }
}

pub fn bell_projector(label: usize) -> ComplexMatrix {
    let v = bell_vector(label);
    ComplexMatrix::outer(&v, &v)
}

/// Four-outcome measurement on a qubit pair, indexed by the labels 00, 01, 10, 11.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyBellPovm {
    elements: [ComplexMatrix; 4],
}

impl NoisyBellPovm {
    pub fn new(elements: [ComplexMatrix; 4]) -> Result<Self> {
        let mut sum = ComplexMatrix::zeros(4, 4);
        for (c, m) in elements.iter().enumerate() {
            if m.rows() != 4 || m.cols() != 4 {
                return Err(Error::InvalidPovm(format!("element {c} is not 4x4")));
            }
            if !m.is_finite() {
                return Err(Error::InvalidPovm(format!("element {c} has non-finite entries")));
            }
            if m.hermiticity_defect() > POVM_SUM_TOL {
                return Err(Error::InvalidPovm(format!("element {c} is not Hermitian")));
            }
            let min = hermitian_eigenvalues(m)?[0];
            if min < -POVM_PSD_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {c} is not positive semidefinite (eigenvalue {min:.3e})"
                )));
            }
            sum = &sum + m;
        }
        let defect = sum.max_abs_diff(&ComplexMatrix::identity(4));
        if defect > POVM_SUM_TOL {
            return Err(Error::InvalidPovm(format!(
                "elements do not sum to the identity (max deviation {defect:.3e})"
            )));
        }
        Ok(Self { elements })
    }

    pub fn ideal() -> Self {
        Self {
            elements: [0, 1, 2, 3].map(bell_projector),
        }
    }

    /// Depolarized Bell measurement with per-port fidelities, conjugated by
    /// e^{i·twist·H} for a seeded GUE matrix H.
    ///
    /// M_c = F_c Π_c + Σ_{d≠c} (1 − F_d)/3 · Π_d, so the elements sum to I exactly.
    pub fn synthetic(fidelities: [f64; 4], twist: f64, seed: u64) -> Result<Self> {
        for &f in &fidelities {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Invalid(format!("port fidelity {f} outside [0,1]")));
            }
        }
        let proj = [0, 1, 2, 3].map(bell_projector);
        let v = if twist == 0.0 {
            ComplexMatrix::identity(4)
        } else {
            let h = sample_gue(4, &mut SeededStream::new(seed, 0))?;
            herm_expi(&h, twist)?
        };
        let elements = std::array::from_fn(|c| {
            let mut m = proj[c].scale_real(fidelities[c]);
            for d in 0..4 {
                if d != c {
                    m.add_scaled(&proj[d], C64::new((1.0 - fidelities[d]) / 3.0, 0.0));
                }
            }
            m.conjugate_by(&v).hermitian_part()
        });
        Self::new(elements)
    }

    pub fn elements(&self) -> &[ComplexMatrix; 4] {
        &self.elements
    }

    pub fn element(&self, label: usize) -> &ComplexMatrix {
        &self.elements[label]
    }

    /// ⟨Bell_c| M_c |Bell_c⟩ for each port.
    pub fn port_fidelities(&self) -> [f64; 4] {
        std::array::from_fn(|c| self.elements[c].trace_product(&bell_projector(c)).re)
    }

    /// Mean of the per-port fidelities.
    pub fn overall_fidelity(&self) -> f64 {
        self.port_fidelities().iter().sum::<f64>() / 4.0
    }

    pub fn is_ideal(&self, tol: f64) -> bool {
        self.elements
            .iter()
            .enumerate()
            .all(|(c, m)| m.max_abs_diff(&bell_projector(c)) <= tol)
    }

    /// SHA-256 over the little-endian bytes of every entry.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for m in &self.elements {
            for z in m.data() {
                hasher.update(z.re.to_le_bytes());
                hasher.update(z.im.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
