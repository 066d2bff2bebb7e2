fn main() {
    // Banded Cholesky (dpbtrf/dpbtrs) comes from the system LAPACK.
    println!("cargo:rustc-link-lib=dylib=lapack");
}
