//! Soft-thresholding nonlinearity shared by every solver.

use crate::{Error, Result};

/// Shifts `u` toward zero by `k` and zeroes the band `[-k, k]`.
///
/// Rejects negative `k`; the operator is undefined there.
pub fn soft_threshold(u: f64, k: f64) -> Result<f64> {
    guard(k)?;
    Ok(soft(u, k))
}

/// Derivative of [`soft_threshold`] in `u`: 1 strictly outside the band,
/// 0 inside. The boundary `|u| = k` counts as inside, so the zero set of
/// the derivative always equals the zero set of the operator itself.
pub fn soft_threshold_deriv(u: f64, k: f64) -> Result<f64> {
    guard(k)?;
    Ok(soft_deriv(u, k))
}

fn guard(k: f64) -> Result<()> {
    // `!(k >= 0)` also rejects NaN.
    if k >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeThreshold { k })
    }
}

#[inline]
pub(crate) fn soft(u: f64, k: f64) -> f64 {
    debug_assert!(k >= 0.0);
    if u > k {
        u - k
    } else if u < -k {
        u + k
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn soft_deriv(u: f64, k: f64) -> f64 {
    debug_assert!(k >= 0.0);
    if u > k || u < -k {
        1.0
    } else {
        0.0
    }
}
