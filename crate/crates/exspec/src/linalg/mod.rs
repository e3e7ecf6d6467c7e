//! Linear-algebra support: LAPACK bindings, tridiagonal and banded
//! factorizations, and the iterative solvers built on them.

pub mod krylov;
pub mod lapack;
pub mod tridiag;

pub use krylov::{arnoldi_shift_invert, gmres, lanczos_smallest};
pub use lapack::{complex_eigen_dense, ComplexBandLu, RealBandLu};
pub use tridiag::{SymTridiag, TridiagLu};
