//! Thin FFI layer over the system LAPACK (provided by OpenBLAS).
//!
//! Only the routines this crate actually calls are declared: symmetric
//! tridiagonal eigensolvers, real and complex banded LU, and a small dense
//! complex eigensolver. All wrappers validate the `info` return and
//! translate failures into [`Error::Linalg`].

use num_complex::Complex64;

use crate::error::{Error, Result};

#[allow(clippy::too_many_arguments)]
extern "C" {
    fn dstevr_(
        jobz: *const u8,
        range: *const u8,
        n: *const i32,
        d: *mut f64,
        e: *mut f64,
        vl: *const f64,
        vu: *const f64,
        il: *const i32,
        iu: *const i32,
        abstol: *const f64,
        m: *mut i32,
        w: *mut f64,
        z: *mut f64,
        ldz: *const i32,
        isuppz: *mut i32,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn dstevd_(
        jobz: *const u8,
        n: *const i32,
        d: *mut f64,
        e: *mut f64,
        z: *mut f64,
        ldz: *const i32,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn dgbtrf_(
        m: *const i32,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        ab: *mut f64,
        ldab: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn dgbtrs_(
        trans: *const u8,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        nrhs: *const i32,
        ab: *const f64,
        ldab: *const i32,
        ipiv: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn zgbtrf_(
        m: *const i32,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        ab: *mut Complex64,
        ldab: *const i32,
        ipiv: *mut i32,
        info: *mut i32,
    );

    fn zgbtrs_(
        trans: *const u8,
        n: *const i32,
        kl: *const i32,
        ku: *const i32,
        nrhs: *const i32,
        ab: *const Complex64,
        ldab: *const i32,
        ipiv: *const i32,
        b: *mut Complex64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn zgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const i32,
        a: *mut Complex64,
        lda: *const i32,
        w: *mut Complex64,
        vl: *mut Complex64,
        ldvl: *const i32,
        vr: *mut Complex64,
        ldvr: *const i32,
        work: *mut Complex64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
}

fn check_info(info: i32, routine: &str) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::Linalg(format!("{routine} failed with info = {info}")))
    }
}

/// Eigenpairs `il..=iu` (1-based, ascending) of a symmetric tridiagonal
/// matrix. Returns the eigenvalues and the eigenvectors as concatenated
/// columns of length `n`.
pub fn sym_tridiag_eigen_range(
    diag: &[f64],
    off: &[f64],
    il: usize,
    iu: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len() as i32;
    assert_eq!(off.len() + 1, diag.len());
    assert!(il >= 1 && il <= iu && iu <= diag.len());
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let nev = iu - il + 1;
    let (il, iu) = (il as i32, iu as i32);
    let abstol = 0.0;
    let mut m = 0i32;
    let mut w = vec![0.0f64; diag.len()];
    let mut z = vec![0.0f64; diag.len() * nev];
    let ldz = n;
    let mut isuppz = vec![0i32; 2 * nev.max(1)];
    let lwork = 20 * n.max(1);
    let liwork = 10 * n.max(1);
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    let mut info = 0i32;
    unsafe {
        dstevr_(
            &b'V',
            &b'I',
            &n,
            d.as_mut_ptr(),
            e.as_mut_ptr(),
            &0.0,
            &0.0,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ldz,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    check_info(info, "dstevr")?;
    if m as usize != nev {
        return Err(Error::Linalg(format!(
            "dstevr returned {m} eigenpairs, expected {nev}"
        )));
    }
    w.truncate(nev);
    Ok((w, z))
}

/// Full eigendecomposition of a symmetric tridiagonal matrix
/// (divide and conquer). Returns eigenvalues ascending and the
/// orthogonal eigenvector matrix as concatenated columns.
pub fn sym_tridiag_eigen_all(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len() as i32;
    assert_eq!(off.len() + 1, diag.len());
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    let mut z = vec![0.0f64; diag.len() * diag.len()];
    let lwork = 1 + 4 * n + n * n;
    let liwork = 3 + 5 * n;
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    let mut info = 0i32;
    unsafe {
        dstevd_(
            &b'V',
            &n,
            d.as_mut_ptr(),
            e.as_mut_ptr(),
            z.as_mut_ptr(),
            &n,
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    check_info(info, "dstevd")?;
    Ok((d, z))
}

/// LU factorization of a real banded matrix in LAPACK band storage.
pub struct RealBandLu {
    n: i32,
    kl: i32,
    ku: i32,
    ldab: i32,
    ab: Vec<f64>,
    ipiv: Vec<i32>,
}

impl RealBandLu {
    /// Factors the matrix given by `entry(i, j)` for `|i - j| <= kl`
    /// (row i, column j, zero-based); `kl` is used for both bandwidths.
    pub fn factor(n: usize, kl: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let ku = kl;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0f64; ldab * n];
        for j in 0..n {
            let lo = j.saturating_sub(ku);
            let hi = (j + kl).min(n - 1);
            for i in lo..=hi {
                ab[j * ldab + (kl + ku + i - j)] = entry(i, j);
            }
        }
        let (n_i, kl_i, ku_i, ldab_i) = (n as i32, kl as i32, ku as i32, ldab as i32);
        let mut ipiv = vec![0i32; n];
        let mut info = 0i32;
        unsafe {
            dgbtrf_(
                &n_i,
                &n_i,
                &kl_i,
                &ku_i,
                ab.as_mut_ptr(),
                &ldab_i,
                ipiv.as_mut_ptr(),
                &mut info,
            );
        }
        check_info(info, "dgbtrf")?;
        Ok(RealBandLu { n: n_i, kl: kl_i, ku: ku_i, ldab: ldab_i, ab, ipiv })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n as usize);
        let nrhs = 1i32;
        let mut info = 0i32;
        unsafe {
            dgbtrs_(
                &b'N',
                &self.n,
                &self.kl,
                &self.ku,
                &nrhs,
                self.ab.as_ptr(),
                &self.ldab,
                self.ipiv.as_ptr(),
                b.as_mut_ptr(),
                &self.n,
                &mut info,
            );
        }
        check_info(info, "dgbtrs")
    }
}

/// LU factorization of a complex banded matrix in LAPACK band storage.
pub struct ComplexBandLu {
    n: i32,
    kl: i32,
    ku: i32,
    ldab: i32,
    ab: Vec<Complex64>,
    ipiv: Vec<i32>,
}

impl ComplexBandLu {
    /// Factors the matrix given by `entry(i, j)` for `|i - j| <= kl`.
    pub fn factor(
        n: usize,
        kl: usize,
        entry: impl Fn(usize, usize) -> Complex64,
    ) -> Result<Self> {
        let ku = kl;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![Complex64::ZERO; ldab * n];
        for j in 0..n {
            let lo = j.saturating_sub(ku);
            let hi = (j + kl).min(n - 1);
            for i in lo..=hi {
                ab[j * ldab + (kl + ku + i - j)] = entry(i, j);
            }
        }
        let (n_i, kl_i, ku_i, ldab_i) = (n as i32, kl as i32, ku as i32, ldab as i32);
        let mut ipiv = vec![0i32; n];
        let mut info = 0i32;
        unsafe {
            zgbtrf_(
                &n_i,
                &n_i,
                &kl_i,
                &ku_i,
                ab.as_mut_ptr(),
                &ldab_i,
                ipiv.as_mut_ptr(),
                &mut info,
            );
        }
        check_info(info, "zgbtrf")?;
        Ok(ComplexBandLu { n: n_i, kl: kl_i, ku: ku_i, ldab: ldab_i, ab, ipiv })
    }

    fn solve_trans(&self, b: &mut [Complex64], trans: u8) -> Result<()> {
        assert_eq!(b.len(), self.n as usize);
        let nrhs = 1i32;
        let mut info = 0i32;
        unsafe {
            zgbtrs_(
                &trans,
                &self.n,
                &self.kl,
                &self.ku,
                &nrhs,
                self.ab.as_ptr(),
                &self.ldab,
                self.ipiv.as_ptr(),
                b.as_mut_ptr(),
                &self.n,
                &mut info,
            );
        }
        check_info(info, "zgbtrs")
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) -> Result<()> {
        self.solve_trans(b, b'N')
    }

    /// Solves with the conjugate transpose of the factored matrix
    /// (adjoint solves for singular-value estimation).
    pub fn solve_adjoint_in_place(&self, b: &mut [Complex64]) -> Result<()> {
        self.solve_trans(b, b'C')
    }
}

/// Eigenvalues and right eigenvectors of a small dense complex matrix
/// (column-major, overwritten). Eigenvectors are concatenated columns.
pub fn complex_eigen_dense(
    a: &mut [Complex64],
    n: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    assert_eq!(a.len(), n * n);
    let n_i = n as i32;
    let mut w = vec![Complex64::ZERO; n];
    let mut vr = vec![Complex64::ZERO; n * n];
    let mut vl = [Complex64::ZERO; 1];
    let lwork = (4 * n.max(1)) as i32;
    let mut work = vec![Complex64::ZERO; lwork as usize];
    let mut rwork = vec![0.0f64; 2 * n.max(1)];
    let mut info = 0i32;
    unsafe {
        zgeev_(
            &b'N',
            &b'V',
            &n_i,
            a.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            vl.as_mut_ptr(),
            &1i32,
            vr.as_mut_ptr(),
            &n_i,
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    check_info(info, "zgeev")?;
    Ok((w, vr))
}
