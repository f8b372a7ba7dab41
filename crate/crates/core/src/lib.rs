//! Noise metrology for cryogenic microwave readout chains.
//!
//! The crate covers the full desk-side workflow for calibrating amplifier
//! chains against thermal noise standards:
//!
//! - photon-flux noise laws (thermal, shot, quantum limits) and PSD
//!   conversions ([`physics`]);
//! - two-port S-parameter handling: Touchstone v1 I/O, cascading, SOLR
//!   vector calibration and de-embedding ([`sparams`]);
//! - thermal occupation cascades through attenuating input lines
//!   ([`thermal`]);
//! - noise-source-referenced chain calibration by fitting measured PSDs
//!   against the thermal law, plus added-noise extraction ([`planck`]);
//! - bias analysis of affine gain fits when the variable source drives the
//!   amplifier through its nonlinear frequency-conversion paths ([`bias`]);
//! - a simulated cryostat and an end-to-end calibration protocol runner
//!   with replayable reports ([`protocol`]).
//!
//! All numeric kernels are generic over the [`scalar::Scalar`] type; the
//! aliases at the crate root fix `f64`, which is what the stated tolerances
//! assume.

// Guards written as `!(x > limit)` are deliberate: unlike `x <= limit`,
// the negated form also rejects NaN, which is exactly what the domain
// checks must catch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod constants;
pub mod error;
pub(crate) mod grid;
pub mod physics;
pub mod planck;
pub mod protocol;
pub mod scalar;
pub mod sparams;
pub mod thermal;

pub use error::{Error, Result};
pub use physics::{ControlParameter, Frequency, SourceKind};
pub use scalar::Scalar;

/// Frequency in Hz at the working precision of the toolkit.
pub type Freq = physics::Frequency<f64>;

/// Two-port network at the working precision of the toolkit.
pub type TwoPortSParams = sparams::TwoPort<f64>;

/// One-port reflection data at the working precision of the toolkit.
pub type OnePortSParams = sparams::OnePort<f64>;

/// Solved calibration error boxes at the working precision of the toolkit.
pub type CalErrorBoxes = sparams::cal::ErrorBoxes<f64>;
