fn main() {
    // The `lapack` bindings need a provider at link time; the system
    // OpenBLAS ships the full LAPACK symbol set.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
