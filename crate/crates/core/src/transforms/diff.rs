//! Radial derivative of line sinograms and its transpose.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_len(n_s: usize) -> Result<()> {
    if n_s < 3 {
        return Err(Error::InvalidGrid(format!("radial derivative needs n_s >= 3, got {n_s}")));
    }
    Ok(())
}

/// `∂/∂s` along the last axis: central differences inside, one-sided at the
/// two ends.
pub fn diff_s<T: Real>(sino: &ArrayView2<'_, T>, ds: f64) -> Result<Array2<T>> {
    let (n_mu, n_s) = sino.dim();
    check_len(n_s)?;
    let (h1, h2) = (T::of(1.0 / ds), T::of(0.5 / ds));
    let mut out = Array2::<T>::zeros((n_mu, n_s));
    for (src, mut dst) in sino.outer_iter().zip(out.outer_iter_mut()) {
        dst[0] = (src[1] - src[0]) * h1;
        for i in 1..n_s - 1 {
            dst[i] = (src[i + 1] - src[i - 1]) * h2;
        }
        dst[n_s - 1] = (src[n_s - 1] - src[n_s - 2]) * h1;
    }
    Ok(out)
}

/// Exact transpose of [`diff_s`].
pub fn diff_s_adjoint<T: Real>(sino: &ArrayView2<'_, T>, ds: f64) -> Result<Array2<T>> {
    let (n_mu, n_s) = sino.dim();
    check_len(n_s)?;
    let (h1, h2) = (T::of(1.0 / ds), T::of(0.5 / ds));
    let mut out = Array2::<T>::zeros((n_mu, n_s));
    for (src, mut dst) in sino.outer_iter().zip(out.outer_iter_mut()) {
        // Scatter each row of the difference matrix.
        dst[0] -= src[0] * h1;
        dst[1] += src[0] * h1;
        for i in 1..n_s - 1 {
            dst[i - 1] -= src[i] * h2;
            dst[i + 1] += src[i] * h2;
        }
        dst[n_s - 2] -= src[n_s - 1] * h1;
        dst[n_s - 1] += src[n_s - 1] * h1;
    }
    Ok(out)
}
