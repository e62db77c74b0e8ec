//! Dense complex linear algebra, states, and partial-transpose oracles.

pub mod eigen;
pub mod matrix;
pub mod perm;
pub mod state;

pub use eigen::{herm_expi, hermitian_eigen, hermitian_eigenvalues, hermitian_pinv, trace_norm, HermitianEigen};
pub use matrix::{ComplexMatrix, C64};
pub use perm::{all_permutations, permutation_matrix, PermutationOperator, CYCLE_BACKWARD, CYCLE_FORWARD};
pub use state::{exact_pt_moment, negativity, p3_ppt_value, partial_transpose, DensityMatrix, Partition};
