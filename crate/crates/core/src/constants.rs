//! Physical constants (CODATA 2018), shared by every module.
//!
//! Values are written to 10 significant digits so golden tests remain stable.

use crate::scalar::{cast, Scalar};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054571817e-34;

/// Boltzmann constant, J/K (exact in the SI).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Elementary charge, C (exact in the SI).
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;

/// `HBAR` in the working scalar type.
#[inline]
pub fn hbar<T: Scalar>() -> T {
    cast(HBAR)
}

/// `BOLTZMANN` in the working scalar type.
#[inline]
pub fn boltzmann<T: Scalar>() -> T {
    cast(BOLTZMANN)
}

/// `ELEMENTARY_CHARGE` in the working scalar type.
#[inline]
pub fn elementary_charge<T: Scalar>() -> T {
    cast(ELEMENTARY_CHARGE)
}
