//! Thin wrappers around the dense factorizations used throughout the crate.
//!
//! All kernels run with sequential faer parallelism so that results never
//! depend on the size of the thread pool; parallel speedups come from
//! explicit sample blocking in the callers.

use std::sync::Once;

use faer::{Mat, MatRef, Side};

pub use faer::c64;

use crate::error::{Error, Result};

static INIT: Once = Once::new();

pub(crate) fn init() {
    INIT.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Thin SVD `a = U diag(s) V^T`, singular values non-increasing.
///
/// The sign of every singular pair is fixed so that the entry of largest
/// magnitude in each left singular vector is positive.
pub fn thin_svd(a: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    init();
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Shape(format!(
            "svd of empty {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("svd did not converge: {e:?}")))?;
    let mut u = svd.U().to_owned();
    let mut v = svd.V().to_owned();
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    for j in 0..u.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..u.nrows() {
            let x = u[(i, j)];
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    Ok((u, s, v))
}

/// Thin QR: `a = Q R` with `Q` of shape `(rows, min(rows, cols))`.
pub fn thin_qr(a: MatRef<'_, f64>) -> (Mat<f64>, Mat<f64>) {
    init();
    let qr = a.qr();
    (qr.compute_thin_Q(), qr.thin_R().to_owned())
}

/// Symmetric eigen-decomposition with eigenvalues sorted in descending order.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    init();
    let n = a.nrows();
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    let vals: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let vecs = evd.U();
    // faer returns ascending order
    let order: Vec<usize> = (0..n).rev().collect();
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = Mat::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    Ok((sorted_vals, sorted_vecs))
}

/// General eigen-decomposition, eigenvalues sorted by descending real part.
///
/// Conjugate pairs are ordered with the positive imaginary part first.
pub fn general_eigen(a: MatRef<'_, f64>) -> Result<(Vec<c64>, Mat<c64>)> {
    init();
    let n = a.nrows();
    let evd = a
        .eigen()
        .map_err(|e| Error::Numeric(format!("eigensolver failed: {e:?}")))?;
    let vals: Vec<c64> = evd.S().column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        vals[j]
            .re
            .partial_cmp(&vals[i].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                vals[j]
                    .im
                    .partial_cmp(&vals[i].im)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    let u = evd.U();
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = Mat::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok((sorted_vals, sorted_vecs))
}

/// `a * b` with sequential kernels.
pub fn matmul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    init();
    a * b
}

/// `max |a^T a - I|` for checking orthonormal columns.
pub fn orthonormality_residual(a: MatRef<'_, f64>) -> f64 {
    let g = matmul(a.transpose(), a);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
