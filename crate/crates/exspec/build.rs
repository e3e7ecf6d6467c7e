fn main() {
    // LAPACK and BLAS come from the system OpenBLAS; it carries the full
    // LAPACK symbol set (dstevr, dstevd, zgeev, banded LU) on this image.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
