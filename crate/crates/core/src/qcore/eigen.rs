//! Cyclic Jacobi diagonalization of small Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot `a_pq` with a diagonal
//! unitary, then applies a real Givens rotation that zeroes it. Sweeps run
//! until the off-diagonal Frobenius norm drops below `1e-12 · ‖A‖_F`.

use super::matrix::{ComplexMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-8;
const REL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// V · diag(f(λ)) · V†
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let n = self.values.len();
        let v = &self.vectors;
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == ZERO {
                continue;
            }
            for i in 0..n {
                let vik = v[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vik * v[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|x| C64::new(x, 0.0))
    }
}

fn check_hermitian(m: &ComplexMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigensolver needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let defect = m.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

fn jacobi(m: &ComplexMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<ComplexMatrix>)> {
    check_hermitian(m)?;
    let n = m.dim();
    let mut a = m.hermitian_part();
    let mut v = want_vectors.then(|| ComplexMatrix::identity(n));
    let scale = a.frobenius_norm();
    if n <= 1 || scale == 0.0 {
        let vals = (0..n).map(|i| a[(i, i)].re).collect();
        return Ok((vals, v));
    }
    let target = (REL_TOL * scale).powi(2);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= f64::MIN_POSITIVE {
                    continue;
                }
                // Phase step: column q *= conj(e), row q *= e; makes a_pq real and positive.
                let e = apq / r;
                let ec = e.conj();
                for i in 0..n {
                    a[(i, q)] *= ec;
                }
                for j in 0..n {
                    a[(q, j)] *= e;
                }
                if let Some(v) = v.as_mut() {
                    for i in 0..n {
                        v[(i, q)] *= ec;
                    }
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J_pp = J_qq = c, J_pq = s, J_qp = -s.
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * c - aiq * s;
                    a[(i, q)] = aip * s + aiq * c;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = apj * c - aqj * s;
                    a[(q, j)] = apj * s + aqj * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                if let Some(v) = v.as_mut() {
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip * c - viq * s;
                        v[(i, q)] = vip * s + viq * c;
                    }
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = v.map(|v| {
        let mut sorted = ComplexMatrix::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            for i in 0..n {
                sorted[(i, new)] = v[(i, old)];
            }
        }
        sorted
    });
    Ok((values, vectors))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    jacobi(m, false).map(|(vals, _)| vals)
}

/// Eigenvalues (ascending) together with an orthonormal eigenbasis.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<HermitianEigen> {
    let (values, vectors) = jacobi(m, true)?;
    Ok(HermitianEigen {
        values,
        vectors: vectors.unwrap_or_else(|| ComplexMatrix::identity(0)),
    })
}

/// Σ|λ| of a Hermitian matrix.
pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_eigenvalues(m)?.iter().map(|x| x.abs()).sum())
}

/// Moore–Penrose pseudo-inverse of a Hermitian PSD-or-indefinite matrix.
/// Eigenvalues below `rel_cutoff · max|λ|` are treated as zero.
pub fn hermitian_pinv(m: &ComplexMatrix, rel_cutoff: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eigen(m)?;
    let top = eig.values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let cut = rel_cutoff * top;
    Ok(eig.reconstruct_with(|x| if x.abs() > cut { ONE / x } else { ZERO }))
}

/// e^{iεH} for Hermitian `H`. Returns the identity exactly when `eps == 0`.
pub fn herm_expi(h: &ComplexMatrix, eps: f64) -> Result<ComplexMatrix> {
    check_hermitian(h)?;
    if eps == 0.0 {
        return Ok(ComplexMatrix::identity(h.rows()));
    }
    if h.rows() == 2 {
        return Ok(expi_2x2(h, eps));
    }
    let eig = hermitian_eigen(h)?;
    Ok(eig.reconstruct_with(|x| C64::from_polar(1.0, eps * x)))
}

// H = a·I + bx·X + by·Y + bz·Z, so e^{iεH} = e^{iεa}(cos(ε|b|) I + i sin(ε|b|) b̂·σ).
fn expi_2x2(h: &ComplexMatrix, eps: f64) -> ComplexMatrix {
    let a = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let bz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let bx = h[(1, 0)].re;
    let by = h[(1, 0)].im;
    let r = (bx * bx + by * by + bz * bz).sqrt();
    let phase = C64::from_polar(1.0, eps * a);
    let (c, s) = ((eps * r).cos(), (eps * r).sin());
    let (nx, ny, nz) = if r > 0.0 { (bx / r, by / r, bz / r) } else { (0.0, 0.0, 0.0) };
    let is = C64::new(0.0, s);
    let mut m = ComplexMatrix::zeros(2, 2);
    m[(0, 0)] = phase * (C64::new(c, 0.0) + is * nz);
    m[(1, 1)] = phase * (C64::new(c, 0.0) - is * nz);
    m[(0, 1)] = phase * is * C64::new(nx, -ny);
    m[(1, 0)] = phase * is * C64::new(nx, ny);
    m
}
