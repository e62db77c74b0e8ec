//! Permutation operators on tensor-product spaces.
//!
//! Convention: `W_π` places input factor `π[i]` into output slot `i`, so
//! `W_π |ψ_0 … ψ_{k-1}⟩ = |ψ_{π[0]} … ψ_{π[k-1]}⟩`. With this,
//! `W_σ W_π = W_{π∘σ}` and `Tr W_π = d^{#cycles(π)}`.

use super::matrix::{ComplexMatrix, ONE};
use crate::error::{Error, Result};

/// `W_→|ψ₁ψ₂ψ₃⟩ = |ψ₃ψ₁ψ₂⟩`
pub const CYCLE_FORWARD: [usize; 3] = [2, 0, 1];
/// `W_←|ψ₁ψ₂ψ₃⟩ = |ψ₂ψ₃ψ₁⟩`
pub const CYCLE_BACKWARD: [usize; 3] = [1, 2, 0];
pub const SWAP: [usize; 2] = [1, 0];

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

pub fn cycle_count(perm: &[usize]) -> usize {
    let mut seen = vec![false; perm.len()];
    let mut cycles = 0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        cycles += 1;
        let mut j = start;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
        }
    }
    cycles
}

pub fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `(a∘b)[i] = a[b[i]]`
pub fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&i| a[i]).collect()
}

/// All permutations of `0..k` in lexicographic order (identity first).
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Index map of the factor permutation: `out_index[in_index]` for a space
/// `⊗_i C^{dims[i]}` whose output slot `i` receives input slot `perm[i]`.
pub fn factor_permutation_map(dims: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    if perm.len() != dims.len() || !is_permutation(perm) {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    let m = dims.len();
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let total: usize = dims.iter().product();
    let mut digits = vec![0usize; m];
    let mut map = vec![0usize; total];
    for (idx, slot) in map.iter_mut().enumerate() {
        let mut rem = idx;
        for i in (0..m).rev() {
            digits[i] = rem % dims[i];
            rem /= dims[i];
        }
        let mut out = 0;
        for i in 0..m {
            out = out * out_dims[i] + digits[perm[i]];
        }
        *slot = out;
    }
    Ok(map)
}

/// Matrix of the factor permutation described in [`factor_permutation_map`].
pub fn factor_permutation(dims: &[usize], perm: &[usize]) -> Result<ComplexMatrix> {
    let map = factor_permutation_map(dims, perm)?;
    let n = map.len();
    let mut m = ComplexMatrix::zeros(n, n);
    for (src, &dst) in map.iter().enumerate() {
        m[(dst, src)] = ONE;
    }
    Ok(m)
}

/// `P X P†` for the factor permutation `P`, computed by index relabeling.
pub fn permute_operator_factors(x: &ComplexMatrix, dims: &[usize], perm: &[usize]) -> Result<ComplexMatrix> {
    let map = factor_permutation_map(dims, perm)?;
    if x.rows() != map.len() || x.cols() != map.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator of size {} on a space of dimension {}",
            x.rows(),
            map.len()
        )));
    }
    let n = map.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(map[i], map[j])] = x[(i, j)];
        }
    }
    Ok(out)
}

/// `Tr[X · P]` for the factor permutation `P`, without building `P`.
pub fn trace_with_factor_permutation(x: &ComplexMatrix, dims: &[usize], perm: &[usize]) -> Result<super::matrix::C64> {
    let map = factor_permutation_map(dims, perm)?;
    if x.rows() != map.len() || x.cols() != map.len() {
        return Err(Error::DimensionMismatch("operator size".into()));
    }
    // P[map[j], j] = 1, so Tr[X P] = Σ_j X[j, map[j]].
    Ok(map.iter().enumerate().map(|(j, &mj)| x[(j, mj)]).sum())
}

/// Permutation operator `W_π` on `k` copies of `C^d`.
#[derive(Clone, Debug)]
pub struct PermutationOperator {
    pub k: usize,
    pub d: usize,
    pub perm: Vec<usize>,
    pub mat: ComplexMatrix,
}

pub fn permutation_matrix(perm: &[usize], d: usize, k: usize) -> Result<PermutationOperator> {
    if perm.len() != k {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    let mat = factor_permutation(&vec![d; k], perm)?;
    Ok(PermutationOperator {
        k,
        d,
        perm: perm.to_vec(),
        mat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::matrix::C64;

    #[test]
    fn identity_permutation_is_identity_matrix() {
        let w = permutation_matrix(&[0, 1], 2, 2).unwrap();
        assert_eq!(w.mat, ComplexMatrix::identity(4));
    }

    #[test]
    fn forward_cycle_moves_third_factor_first() {
        // |0⟩|0⟩|1⟩ -> |1⟩|0⟩|0⟩ under W_→
        let w = permutation_matrix(&CYCLE_FORWARD, 2, 3).unwrap();
        let mut v = vec![C64::new(0.0, 0.0); 8];
        v[0b001] = ONE;
        let out = w.mat.matvec(&v);
        assert_eq!(out[0b100], ONE);
        // W_← is the inverse
        let b = permutation_matrix(&CYCLE_BACKWARD, 2, 3).unwrap();
        assert_eq!(w.mat.matmul(&b.mat), ComplexMatrix::identity(8));
    }

    #[test]
    fn gram_entries_count_cycles() {
        let f = permutation_matrix(&CYCLE_FORWARD, 2, 3).unwrap();
        let b = permutation_matrix(&CYCLE_BACKWARD, 2, 3).unwrap();
        // W_← is the inverse of W_→: Tr(W_→ W_←) = d³, while W_→ W_←† = W_→² is a 3-cycle.
        assert!((f.mat.matmul(&b.mat).trace().re - 8.0).abs() < 1e-12);
        assert!((f.mat.matmul(&b.mat.dagger()).trace().re - 2.0).abs() < 1e-12);
        assert!((f.mat.matmul(&f.mat.dagger()).trace().re - 8.0).abs() < 1e-12);
        for s in all_permutations(3) {
            for p in all_permutations(3) {
                let ws = permutation_matrix(&s, 3, 3).unwrap();
                let wp = permutation_matrix(&p, 3, 3).unwrap();
                let tr = ws.mat.matmul(&wp.mat.dagger()).trace().re;
                let cyc = cycle_count(&compose(&s, &inverse(&p)));
                assert!((tr - 3f64.powi(cyc as i32)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn composition_rule() {
        for s in all_permutations(3) {
            for p in all_permutations(3) {
                let ws = permutation_matrix(&s, 2, 3).unwrap().mat;
                let wp = permutation_matrix(&p, 2, 3).unwrap().mat;
                let wc = permutation_matrix(&compose(&p, &s), 2, 3).unwrap().mat;
                assert_eq!(ws.matmul(&wp), wc);
            }
        }
    }

    #[test]
    fn invalid_permutations() {
        assert!(permutation_matrix(&[0, 0], 2, 2).is_err());
        assert!(permutation_matrix(&[0, 2], 2, 2).is_err());
        assert!(permutation_matrix(&[0, 1, 2], 2, 2).is_err());
    }

    #[test]
    fn relabeling_matches_conjugation() {
        let dims = [2, 3, 2];
        let perm = [2, 0, 1];
        let p = factor_permutation(&dims, &perm).unwrap();
        assert!(p.unitarity_defect() < 1e-15);
        let n = 12;
        let mut x = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                x[(i, j)] = C64::new(i as f64, j as f64 * 0.5);
            }
        }
        let direct = x.conjugate_by(&p);
        let relabeled = permute_operator_factors(&x, &dims, &perm).unwrap();
        assert!(direct.max_abs_diff(&relabeled) < 1e-12);
        let tr = trace_with_factor_permutation(&x, &dims, &perm).unwrap();
        assert!((tr - x.matmul(&p).trace()).norm() < 1e-12);
    }
}
