//! Two-port S-parameter data model, network cascading, Touchstone v1 I/O,
//! and SOLR vector calibration / de-embedding.
//!
//! Conventions: port 1 is the input side, port 2 the output side; `S21` is
//! forward transmission. Wave-cascade (T) matrices use the
//! `[b1; a1] = T·[a2; b2]` ordering so that cascading multiplies left to
//! right, with `det T = S12/S21`.

pub mod cal;
pub mod touchstone;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bracket, check_ascending, lerp};
use crate::physics::{db_to_linear, source_output_occupation, QualificationPoint, SourceKind};
use crate::scalar::{as_f64, cast, Scalar};

/// One complex 2×2 scattering matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SPoint<T> {
    pub s11: Complex<T>,
    pub s12: Complex<T>,
    pub s21: Complex<T>,
    pub s22: Complex<T>,
}

/// Complex 2×2 matrix used for wave-cascade arithmetic.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat2<T> {
    pub a: Complex<T>,
    pub b: Complex<T>,
    pub c: Complex<T>,
    pub d: Complex<T>,
}

impl<T: Scalar> Mat2<T> {
    pub fn det(&self) -> Complex<T> {
        self.a * self.d - self.b * self.c
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn inv(&self) -> Option<Self> {
        let det = self.det();
        if det.norm_sqr() == T::zero() {
            return None;
        }
        Some(Self {
            a: self.d / det,
            b: -self.b / det,
            c: -self.c / det,
            d: self.a / det,
        })
    }
}

impl<T: Scalar> SPoint<T> {
    pub fn new(s11: Complex<T>, s12: Complex<T>, s21: Complex<T>, s22: Complex<T>) -> Self {
        Self { s11, s12, s21, s22 }
    }

    /// Matched, symmetric, lossless through connection.
    pub fn ideal_thru() -> Self {
        let one = Complex::new(T::one(), T::zero());
        let zero = Complex::new(T::zero(), T::zero());
        Self::new(zero, one, one, zero)
    }

    /// A pure reflection `Γ` on both ports with no through path.
    pub fn reflect(gamma: Complex<T>) -> Self {
        let zero = Complex::new(T::zero(), T::zero());
        Self::new(gamma, zero, zero, gamma)
    }

    pub fn det(&self) -> Complex<T> {
        self.s11 * self.s22 - self.s12 * self.s21
    }

    /// Wave-cascade matrix; `None` when `S21 = 0` (no through path).
    pub(crate) fn to_transfer(self) -> Option<Mat2<T>> {
        if self.s21.norm_sqr() == T::zero() {
            return None;
        }
        let inv_s21 = self.s21.finv();
        Some(Mat2 {
            a: (self.s12 * self.s21 - self.s11 * self.s22) * inv_s21,
            b: self.s11 * inv_s21,
            c: -self.s22 * inv_s21,
            d: inv_s21,
        })
    }

    /// Inverse of [`Self::to_transfer`]; `None` when `T22 = 0`.
    pub(crate) fn from_transfer(t: &Mat2<T>) -> Option<Self> {
        if t.d.norm_sqr() == T::zero() {
            return None;
        }
        Some(Self {
            s11: t.b / t.d,
            s12: t.det() / t.d,
            s21: t.d.finv(),
            s22: -t.c / t.d,
        })
    }

    /// Cascades `self` followed by `next`; `None` on singular conversion.
    pub fn cascade(&self, next: &Self) -> Option<Self> {
        let t = self.to_transfer()?.mul(&next.to_transfer()?);
        Self::from_transfer(&t)
    }

    /// Largest singular value of the scattering matrix; a passive network
    /// satisfies `σ_max ≤ 1`.
    pub fn max_singular_value(&self) -> T {
        // Eigenvalues of the 2×2 Hermitian S†S in closed form.
        let tr = self.s11.norm_sqr() + self.s12.norm_sqr() + self.s21.norm_sqr() + self.s22.norm_sqr();
        let det = self.det().norm_sqr();
        let half = cast::<T>(0.5);
        let disc = (tr * tr - cast::<T>(4.0) * det).max(T::zero()).sqrt();
        (half * (tr + disc)).sqrt()
    }

    /// `|S21 − S12|`, zero for a reciprocal network.
    pub fn reciprocity_defect(&self) -> T {
        (self.s21 - self.s12).norm()
    }
}

/// Frequency-indexed two-port scattering data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPort<T> {
    /// Reference impedance in ohms.
    pub z0_ohm: T,
    /// Strictly ascending frequency grid in Hz.
    pub freqs_hz: Vec<T>,
    /// One scattering matrix per grid point.
    pub points: Vec<SPoint<T>>,
}

impl<T: Scalar> TwoPort<T> {
    pub fn new(z0_ohm: T, freqs_hz: Vec<T>, points: Vec<SPoint<T>>) -> Result<Self> {
        check_ascending(&freqs_hz)?;
        if freqs_hz.len() != points.len() {
            return Err(Error::Grid(format!(
                "{} frequencies but {} scattering points",
                freqs_hz.len(),
                points.len()
            )));
        }
        if !(z0_ohm.is_finite() && z0_ohm > T::zero()) {
            return Err(Error::Domain(format!(
                "reference impedance must be positive, got {z0_ohm}"
            )));
        }
        Ok(Self { z0_ohm, freqs_hz, points })
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// Ideal matched attenuator: `S11 = S22 = 0`, `S21 = S12 = 10^(−dB/20)`.
    pub fn attenuator(att_db: T, freqs_hz: Vec<T>) -> Result<Self> {
        if !(att_db.is_finite() && att_db >= T::zero()) {
            return Err(Error::Domain(format!(
                "attenuation must be non-negative, got {att_db} dB"
            )));
        }
        let t = db_to_linear(-att_db).sqrt();
        let p = SPoint::new(
            Complex::new(T::zero(), T::zero()),
            Complex::new(t, T::zero()),
            Complex::new(t, T::zero()),
            Complex::new(T::zero(), T::zero()),
        );
        let points = vec![p; freqs_hz.len()];
        Self::new(cast(50.0), freqs_hz, points)
    }

    /// Lossless matched through connection on the given grid.
    pub fn ideal_thru(freqs_hz: Vec<T>) -> Result<Self> {
        let points = vec![SPoint::ideal_thru(); freqs_hz.len()];
        Self::new(cast(50.0), freqs_hz, points)
    }

    /// Samples the network at `f_hz`, interpolating linearly in real and
    /// imaginary parts within the tabulated span.
    pub fn sample(&self, f_hz: T) -> Result<SPoint<T>> {
        let (lo, hi, w) = bracket(&self.freqs_hz, f_hz)?;
        if lo == hi {
            return Ok(self.points[lo]);
        }
        let (a, b) = (self.points[lo], self.points[hi]);
        Ok(SPoint {
            s11: lerp(a.s11, b.s11, w),
            s12: lerp(a.s12, b.s12, w),
            s21: lerp(a.s21, b.s21, w),
            s22: lerp(a.s22, b.s22, w),
        })
    }

    /// Re-tabulates onto `freqs_hz`, which must lie within the current span.
    pub fn resample(&self, freqs_hz: Vec<T>) -> Result<Self> {
        check_ascending(&freqs_hz)?;
        let points = freqs_hz
            .iter()
            .map(|&f| self.sample(f))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.z0_ohm, freqs_hz, points)
    }

    /// `true` when every point is passive within `tol` on the largest
    /// singular value.
    pub fn is_passive(&self, tol: T) -> bool {
        self.points
            .iter()
            .all(|p| p.max_singular_value() <= T::one() + tol)
    }

    /// `max |S21 − S12|` across the grid.
    pub fn reciprocity_defect(&self) -> T {
        self.points
            .iter()
            .map(|p| p.reciprocity_defect())
            .fold(T::zero(), T::max)
    }

    /// Cascades `self` followed by `other` (`self`'s port 2 into `other`'s
    /// port 1). Grids must match, or `other` is resampled onto `self`'s
    /// grid; frequencies outside `other`'s span are an error.
    pub fn cascade(&self, other: &Self) -> Result<Self> {
        let resampled;
        let other = if self.freqs_hz == other.freqs_hz {
            other
        } else {
            resampled = other.resample(self.freqs_hz.clone())?;
            &resampled
        };
        let points = self
            .points
            .iter()
            .zip(&other.points)
            .zip(&self.freqs_hz)
            .map(|((a, b), &f)| {
                a.cascade(b).ok_or_else(|| Error::Singular {
                    freq_hz: as_f64(f),
                    msg: "cascade requires S21 != 0 on both networks".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.z0_ohm, self.freqs_hz.clone(), points)
    }

    /// Per-frequency qualification of this network as a noise source
    /// emitting from `port`: passes where `|S_pq|² ≤ threshold·(1 − |S_pp|²)`
    /// with strictly sub-unity reflection.
    pub fn source_qualification(&self, port: Port, threshold: T) -> Result<Vec<QualificationPoint>> {
        if !(threshold > T::zero() && threshold < T::one()) {
            return Err(Error::Domain(format!(
                "qualification threshold must lie in (0, 1), got {threshold}"
            )));
        }
        Ok(self
            .freqs_hz
            .iter()
            .zip(&self.points)
            .map(|(&f, p)| {
                let (reflect_sq, transmit_sq) = match port {
                    Port::One => (p.s11.norm_sqr(), p.s12.norm_sqr()),
                    Port::Two => (p.s22.norm_sqr(), p.s21.norm_sqr()),
                };
                let mut q = QualificationPoint::evaluate(f, reflect_sq, transmit_sq, threshold);
                // A unit-reflection port emits nothing regardless of leakage.
                if reflect_sq >= T::one() {
                    q.pass = false;
                }
                q
            })
            .collect())
    }
}

/// Frequency-indexed one-port reflection data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnePort<T> {
    pub z0_ohm: T,
    pub freqs_hz: Vec<T>,
    pub gamma: Vec<Complex<T>>,
}

impl<T: Scalar> OnePort<T> {
    pub fn new(z0_ohm: T, freqs_hz: Vec<T>, gamma: Vec<Complex<T>>) -> Result<Self> {
        check_ascending(&freqs_hz)?;
        if freqs_hz.len() != gamma.len() {
            return Err(Error::Grid(format!(
                "{} frequencies but {} reflection points",
                freqs_hz.len(),
                gamma.len()
            )));
        }
        if !(z0_ohm.is_finite() && z0_ohm > T::zero()) {
            return Err(Error::Domain(format!(
                "reference impedance must be positive, got {z0_ohm}"
            )));
        }
        Ok(Self { z0_ohm, freqs_hz, gamma })
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// Reflection coefficient at `f_hz`, linearly interpolated.
    pub fn sample(&self, f_hz: T) -> Result<Complex<T>> {
        let (lo, hi, w) = bracket(&self.freqs_hz, f_hz)?;
        if lo == hi {
            return Ok(self.gamma[lo]);
        }
        Ok(lerp(self.gamma[lo], self.gamma[hi], w))
    }
}

/// Port label of a two-port network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    One,
    Two,
}

impl Port {
    pub fn number(self) -> u8 {
        match self {
            Port::One => 1,
            Port::Two => 2,
        }
    }
}

/// A variable noise source embedded in a two-port network.
///
/// The emitter (thermal load or biased junction) sits behind the network and
/// radiates out of `emitting_port`; vacuum enters the far port. The emitted
/// occupation follows `(1 − |S_pp|²)·N_source + (1/2)·|S_pq|²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSourceModel<T> {
    pub sparams: TwoPort<T>,
    pub kind: SourceKind,
    pub emitting_port: Port,
}

impl<T: Scalar> NoiseSourceModel<T> {
    pub fn new(sparams: TwoPort<T>, kind: SourceKind, emitting_port: Port) -> Self {
        Self { sparams, kind, emitting_port }
    }

    /// Occupation radiated from the emitting port when the internal emitter
    /// produces `n_source`.
    pub fn output_occupation(&self, n_source: T, f_hz: T) -> Result<T> {
        let p = self.sparams.sample(f_hz)?;
        let (reflect_sq, transmit_sq) = match self.emitting_port {
            Port::One => (p.s11.norm_sqr(), p.s12.norm_sqr()),
            Port::Two => (p.s22.norm_sqr(), p.s21.norm_sqr()),
        };
        Ok(source_output_occupation(reflect_sq, transmit_sq, n_source))
    }

    /// Qualification of the source against the leakage inequality.
    pub fn qualification(&self, threshold: T) -> Result<Vec<QualificationPoint>> {
        self.sparams.source_qualification(self.emitting_port, threshold)
    }
}
