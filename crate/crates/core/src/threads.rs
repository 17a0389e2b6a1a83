//! Runtime control of BLAS threading.
//!
//! OpenBLAS reads `OPENBLAS_NUM_THREADS` when the library loads, which is
//! before `main` runs, so setting the variable from inside the process has no
//! effect. The exported setter works at any time.

use std::os::raw::c_int;

extern "C" {
    fn openblas_set_num_threads(num_threads: c_int);
}

/// Cap the number of threads OpenBLAS uses per call.
///
/// The estimators parallelize over folds, replications, and grid points with
/// rayon; a single BLAS thread per call avoids oversubscription.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as c_int) }
}
