//! Ascending-frequency-grid helpers shared by the tabulated data types.
//!
//! Lookup policy: linear interpolation inside the tabulated span, exact
//! values at grid points, and a hard error on extrapolation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Validates that a grid is non-empty, finite, and strictly ascending.
pub(crate) fn check_ascending<T: Scalar>(freqs: &[T]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::Grid("frequency grid is empty".into()));
    }
    for (i, w) in freqs.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::Grid(format!(
                "frequency grid must be strictly ascending: grid[{}] = {} !< grid[{}] = {}",
                i,
                w[0],
                i + 1,
                w[1]
            )));
        }
    }
    if freqs.iter().any(|f| !f.is_finite()) {
        return Err(Error::Grid("frequency grid contains non-finite values".into()));
    }
    Ok(())
}

/// Locates `x` in an ascending grid, returning bracket indices and the
/// linear interpolation weight toward the upper index.
pub(crate) fn bracket<T: Scalar>(grid: &[T], x: T) -> Result<(usize, usize, T)> {
    let (first, last) = (grid[0], grid[grid.len() - 1]);
    if !(x >= first && x <= last) {
        return Err(Error::Grid(format!(
            "{x} Hz is outside the tabulated span [{first}, {last}] Hz; extrapolation is not supported"
        )));
    }
    let hi = grid.partition_point(|&g| g < x);
    if hi == 0 {
        return Ok((0, 0, T::zero()));
    }
    if grid[hi] == x {
        return Ok((hi, hi, T::zero()));
    }
    let lo = hi - 1;
    let w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    Ok((lo, hi, w))
}

/// Linear interpolation between two values.
#[inline]
pub(crate) fn lerp<V, T>(a: V, b: V, w: T) -> V
where
    T: Scalar,
    V: std::ops::Mul<T, Output = V> + std::ops::Add<Output = V>,
{
    a * (T::one() - w) + b * w
}
