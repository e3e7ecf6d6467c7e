//! Real symmetric tridiagonal matrices: the assembled form of every scalar
//! radial Schrodinger operator in this crate.

use num_complex::Complex64;

use super::lapack;
use crate::error::Result;

/// Symmetric tridiagonal matrix with main diagonal `diag` and
/// off-diagonal `off` (one entry shorter).
#[derive(Clone, Debug)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len());
        SymTridiag { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Adds `v` to the main diagonal in place (potential terms).
    pub fn add_diagonal(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.diag.len());
        for (d, x) in self.diag.iter_mut().zip(v) {
            *d += x;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        for i in 0..n {
            let mut s = x[i] * self.diag[i];
            if i > 0 {
                s += x[i - 1] * self.off[i - 1];
            }
            if i + 1 < n {
                s += x[i + 1] * self.off[i];
            }
            y[i] = s;
        }
    }

    /// Eigenpairs with 1-based index range `il..=iu` in ascending order.
    pub fn eigen_range(&self, il: usize, iu: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (w, z) = lapack::sym_tridiag_eigen_range(&self.diag, &self.off, il, iu)?;
        let n = self.len();
        let vecs = z.chunks(n).map(|c| c.to_vec()).collect();
        Ok((w, vecs))
    }

    /// Full eigendecomposition; the flat matrix holds eigenvectors as
    /// concatenated columns aligned with the ascending eigenvalues.
    pub fn eigen_all(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        lapack::sym_tridiag_eigen_all(&self.diag, &self.off)
    }

    /// Number of eigenvalues strictly below `x`, by the Sturm sequence of
    /// the shifted matrix (stabilized pivot recurrence).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.len();
        let tiny = f64::MIN_POSITIVE;
        let mut count = 0usize;
        let mut pivot = self.diag[0] - x;
        if pivot < 0.0 {
            count += 1;
        }
        for i in 1..n {
            if pivot.abs() < tiny {
                pivot = -tiny;
            }
            pivot = (self.diag[i] - x) - self.off[i - 1] * self.off[i - 1] / pivot;
            if pivot < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Lower bound on the spectrum from Gershgorin disks.
    pub fn gershgorin_lower(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
                self.diag[i] - left - right
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Factors `T - shift` for repeated solves.
    pub fn shifted_lu(&self, shift: Complex64) -> Result<TridiagLu> {
        let n = self.len();
        let lu = lapack::ComplexBandLu::factor(n, 1, |i, j| {
            if i == j {
                Complex64::new(self.diag[i], 0.0) - shift
            } else {
                Complex64::new(self.off[i.min(j)], 0.0)
            }
        })?;
        Ok(TridiagLu { lu })
    }

    /// One-shot solve of `(T - shift) x = b`.
    pub fn solve_shifted(&self, shift: Complex64, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let lu = self.shifted_lu(shift)?;
        let mut x = b.to_vec();
        lu.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Factored `T - shift` for a symmetric tridiagonal `T`.
pub struct TridiagLu {
    lu: lapack::ComplexBandLu,
}

impl TridiagLu {
    pub fn solve_in_place(&self, b: &mut [Complex64]) -> Result<()> {
        self.lu.solve_in_place(b)
    }

    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x)?;
        Ok(x)
    }
}
