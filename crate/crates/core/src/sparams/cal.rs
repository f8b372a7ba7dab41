//! One-port SOL and two-port SOLR vector calibration.
//!
//! The measurement model is the eight-term error box picture: an input
//! error box A between the instrument reference plane and port 1 of the
//! device, and an output box B between port 2 and the instrument. One-port
//! solves recover directivity, source match, and reflection tracking per
//! port from short/open/load reflections. The SOLR step then uses one
//! measurement of any reciprocal two-port to recover the transmission
//! tracking products, fixing the square-root sign either from a caller
//! phase estimate or by phase continuity along the frequency grid.
//!
//! Only term *products* are observable: the boxes enter through
//! `e10·e01`, `e23·e32`, `e10·e32`, and `e23·e01`, never individually.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{as_f64, cast, Scalar};

use super::{Mat2, OnePort, SPoint, TwoPort};

/// Phase margin (radians) around the quadrature point below which the two
/// square-root candidates are considered indistinguishable by continuity.
pub const QUADRATURE_GUARD_RAD: f64 = 0.35;

/// One reflection calibration standard.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ReflectStandard<T> {
    /// Frequency-independent reflection coefficient.
    Ideal(Complex<T>),
    /// Tabulated reflection data, interpolated onto the solve grid.
    Table(OnePort<T>),
}

impl<T: Scalar> ReflectStandard<T> {
    pub fn gamma_at(&self, f_hz: T) -> Result<Complex<T>> {
        let g = match self {
            ReflectStandard::Ideal(g) => *g,
            ReflectStandard::Table(net) => net.sample(f_hz)?,
        };
        if as_f64(g.norm()) > 1.0 + 1e-6 {
            return Err(Error::Domain(format!(
                "reflection standard magnitude {} exceeds unity",
                g.norm()
            )));
        }
        Ok(g)
    }
}

/// The short/open/load triple presented to one port.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnePortStandards<T> {
    pub short: ReflectStandard<T>,
    pub open: ReflectStandard<T>,
    pub load: ReflectStandard<T>,
}

impl<T: Scalar> OnePortStandards<T> {
    /// Textbook ideals: full reflections of either sign and a perfect match.
    pub fn ideal() -> Self {
        OnePortStandards {
            short: ReflectStandard::Ideal(Complex::new(-T::one(), T::zero())),
            open: ReflectStandard::Ideal(Complex::new(T::one(), T::zero())),
            load: ReflectStandard::Ideal(Complex::new(T::zero(), T::zero())),
        }
    }
}

/// Error terms observable from one port alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnePortTerms<T> {
    /// Directivity: raw reflection with a perfect match attached.
    pub directivity: Complex<T>,
    /// Source match seen looking back into the instrument.
    pub source_match: Complex<T>,
    /// Reflection tracking product.
    pub tracking: Complex<T>,
}

/// Serialization of a complex number as a `[re, im]` pair.
mod cpair {
    use num_complex::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T, S>(z: &Complex<T>, s: S) -> std::result::Result<S::Ok, S::Error>
    where
        T: Serialize,
        S: Serializer,
    {
        (&z.re, &z.im).serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<Complex<T>, D::Error>
    where
        T: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let (re, im) = <(T, T)>::deserialize(d)?;
        Ok(Complex::new(re, im))
    }
}

/// The eight-term error model at one frequency. Complex values serialize
/// as `[re, im]` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint<T> {
    pub freq_hz: T,
    #[serde(with = "cpair")]
    pub e00: Complex<T>,
    #[serde(with = "cpair")]
    pub e11: Complex<T>,
    #[serde(with = "cpair")]
    pub e10e01: Complex<T>,
    #[serde(with = "cpair")]
    pub e33: Complex<T>,
    #[serde(with = "cpair")]
    pub e22: Complex<T>,
    #[serde(with = "cpair")]
    pub e23e32: Complex<T>,
    #[serde(with = "cpair")]
    pub e10e32: Complex<T>,
    #[serde(with = "cpair")]
    pub e23e01: Complex<T>,
}

/// Solved error boxes over a frequency grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoxes<T> {
    pub z0_ohm: T,
    pub points: Vec<ErrorPoint<T>>,
}

impl<T: Scalar> ErrorBoxes<T> {
    /// Transparent boxes: zero directivity and match, unit tracking.
    pub fn identity(z0_ohm: T, freqs_hz: &[T]) -> Self {
        let one = Complex::new(T::one(), T::zero());
        let zero = Complex::new(T::zero(), T::zero());
        ErrorBoxes {
            z0_ohm,
            points: freqs_hz
                .iter()
                .map(|&f| ErrorPoint {
                    freq_hz: f,
                    e00: zero,
                    e11: zero,
                    e10e01: one,
                    e33: zero,
                    e22: zero,
                    e23e32: one,
                    e10e32: one,
                    e23e01: one,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn freqs_hz(&self) -> Vec<T> {
        self.points.iter().map(|p| p.freq_hz).collect()
    }

    fn check_grid(&self, freqs_hz: &[T]) -> Result<()> {
        if self.points.len() != freqs_hz.len()
            || self
                .points
                .iter()
                .zip(freqs_hz)
                .any(|(p, f)| p.freq_hz != *f)
        {
            return Err(Error::Grid(
                "error box grid does not match the network grid".into(),
            ));
        }
        Ok(())
    }
}

/// Solves `a·x = b` for a 3x3 complex system by Gaussian elimination with
/// partial pivoting. Returns `None` when the system is rank deficient.
fn solve3<T: Scalar>(
    mut a: [[Complex<T>; 3]; 3],
    mut b: [Complex<T>; 3],
) -> Option<[Complex<T>; 3]> {
    let scale = a
        .iter()
        .flatten()
        .map(|z| as_f64(z.norm_sqr()))
        .fold(0.0f64, f64::max);
    let floor = cast::<T>(scale * 1e-26);
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&i, &j| {
                a[i][col]
                    .norm_sqr()
                    .partial_cmp(&a[j][col].norm_sqr())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if a[pivot_row][col].norm_sqr() <= floor {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col];
        for row in col + 1..3 {
            let factor = a[row][col] / pivot[col];
            for (entry, lead) in a[row].iter_mut().zip(pivot.iter()).skip(col) {
                *entry -= factor * *lead;
            }
            let sub = factor * b[col];
            b[row] -= sub;
        }
    }
    let mut x = [Complex::new(T::zero(), T::zero()); 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            let sub = a[row][k] * x[k];
            acc -= sub;
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Recovers one-port error terms at every frequency from raw reflections
/// of the three standards.
///
/// Each frequency solves the linear system in `(e00, e11, Δ)` implied by
/// `m = e00 + Γ·e11·m − Γ·Δ`, then forms the tracking product
/// `e10e01 = e00·e11 − Δ`.
pub fn solve_one_port<T: Scalar>(
    freqs_hz: &[T],
    measured_short: &[Complex<T>],
    measured_open: &[Complex<T>],
    measured_load: &[Complex<T>],
    standards: &OnePortStandards<T>,
) -> Result<Vec<OnePortTerms<T>>> {
    let n = freqs_hz.len();
    if measured_short.len() != n || measured_open.len() != n || measured_load.len() != n {
        return Err(Error::Grid(format!(
            "standard traces must match the {n}-point frequency grid"
        )));
    }
    let one = Complex::new(T::one(), T::zero());
    let mut out = Vec::with_capacity(n);
    for (k, &f) in freqs_hz.iter().enumerate() {
        let gammas = [
            standards.short.gamma_at(f)?,
            standards.open.gamma_at(f)?,
            standards.load.gamma_at(f)?,
        ];
        let measured = [measured_short[k], measured_open[k], measured_load[k]];
        let mut a = [[Complex::new(T::zero(), T::zero()); 3]; 3];
        for (row, (&g, &m)) in gammas.iter().zip(&measured).enumerate() {
            a[row] = [one, g * m, -g];
        }
        let x = solve3(a, measured).ok_or_else(|| Error::Singular {
            freq_hz: as_f64(f),
            msg: "reflection standards do not separate the error terms \
                  (are two standards identical?)"
                .into(),
        })?;
        let (e00, e11, delta) = (x[0], x[1], x[2]);
        out.push(OnePortTerms {
            directivity: e00,
            source_match: e11,
            tracking: e00 * e11 - delta,
        });
    }
    Ok(out)
}

fn wrap_phase<T: Scalar>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut y = x % two_pi;
    if y > T::PI() {
        y -= two_pi;
    } else if y < -T::PI() {
        y += two_pi;
    }
    y
}

/// Input box A as a wave-cascade matrix scaled by `e10`:
/// `Ã = e10·T_A`, with `det Ã = e10e01`. Directivity is the reflection on
/// the instrument side, which for box A is its port 1.
fn a_tilde<T: Scalar>(t: &OnePortTerms<T>) -> Mat2<T> {
    let one = Complex::new(T::one(), T::zero());
    Mat2 {
        a: t.tracking - t.directivity * t.source_match,
        b: t.directivity,
        c: -t.source_match,
        d: one,
    }
}

/// Output box B as a wave-cascade matrix scaled by `e32`:
/// `B̃ = e32·T_B`, with `det B̃ = e23e32`. Box B faces the device with its
/// port 1, so source match and directivity sit in mirrored positions.
fn b_tilde<T: Scalar>(t: &OnePortTerms<T>) -> Mat2<T> {
    let one = Complex::new(T::one(), T::zero());
    Mat2 {
        a: t.tracking - t.directivity * t.source_match,
        b: t.source_match,
        c: -t.directivity,
        d: one,
    }
}

/// Completes the eight-term model from per-port one-port terms plus one raw
/// measurement of a reciprocal two-port.
///
/// The transmission tracking obeys
/// `(e10e32)² = e10e01 · e23e32 · M21/M12`, leaving a sign ambiguity per
/// frequency. With `phase_estimate_rad` given (the rough transmission phase
/// of the *corrected* reciprocal), the root within a quarter turn of the
/// estimate is taken; afterwards a continuity pass removes any residual
/// half-turn jumps. Without an estimate, the lowest frequency is anchored
/// near zero phase and continuity alone propagates the choice; if the
/// phase step between neighbouring points comes within
/// [`QUADRATURE_GUARD_RAD`] of a quarter turn the choice is unsafe and
/// [`Error::RootAmbiguity`] reports the affected frequencies.
pub fn solve_solr<T: Scalar>(
    z0_ohm: T,
    freqs_hz: &[T],
    port1: &[OnePortTerms<T>],
    port2: &[OnePortTerms<T>],
    raw_reciprocal: &TwoPort<T>,
    phase_estimate_rad: Option<&[T]>,
) -> Result<ErrorBoxes<T>> {
    let n = freqs_hz.len();
    if port1.len() != n || port2.len() != n || raw_reciprocal.len() != n {
        return Err(Error::Grid(
            "one-port terms and the reciprocal measurement must share one grid".into(),
        ));
    }
    if raw_reciprocal.freqs_hz.iter().zip(freqs_hz).any(|(a, b)| a != b) {
        return Err(Error::Grid(
            "reciprocal measurement grid does not match the solve grid".into(),
        ));
    }
    if let Some(est) = phase_estimate_rad {
        if est.len() != n {
            return Err(Error::Grid(format!(
                "phase estimate has {} points for a {n}-point grid",
                est.len()
            )));
        }
    }

    let mut taus: Vec<Complex<T>> = Vec::with_capacity(n);
    let mut phases: Vec<T> = Vec::with_capacity(n);
    let mut ambiguous: Vec<f64> = Vec::new();

    for k in 0..n {
        let f64_freq = as_f64(freqs_hz[k]);
        let t1 = &port1[k];
        let t2 = &port2[k];
        let product = t1.tracking * t2.tracking;
        if as_f64(product.norm_sqr()) < 1e-24 {
            return Err(Error::Singular {
                freq_hz: f64_freq,
                msg: "reflection tracking vanished; one-port solve is unusable here".into(),
            });
        }
        let m = &raw_reciprocal.points[k];
        if m.s21.norm_sqr() == T::zero() || m.s12.norm_sqr() == T::zero() {
            return Err(Error::Singular {
                freq_hz: f64_freq,
                msg: "reciprocal device shows no transmission; cannot fix tracking".into(),
            });
        }
        let tau_sq = product * m.s21 / m.s12;
        let tau = tau_sq.sqrt();
        let t_m = m.to_transfer().ok_or_else(|| Error::Singular {
            freq_hz: f64_freq,
            msg: "raw reciprocal measurement is not invertible".into(),
        })?;
        let a_inv = a_tilde(t1).inv().ok_or_else(|| Error::Singular {
            freq_hz: f64_freq,
            msg: "input error box is singular".into(),
        })?;
        let b_inv = b_tilde(t2).inv().ok_or_else(|| Error::Singular {
            freq_hz: f64_freq,
            msg: "output error box is singular".into(),
        })?;
        let core = a_inv.mul(&t_m).mul(&b_inv);
        // Corrected transmission would be 1/(tau·core.d); its phase is what
        // the estimate and the continuity rule reason about.
        let base = -(tau * core.d).arg();
        let flipped = wrap_phase(base + T::PI());
        let target = match phase_estimate_rad {
            Some(est) => est[k],
            None if k == 0 => T::zero(),
            None => phases[k - 1],
        };
        let d_base = wrap_phase(base - target).abs();
        let d_flip = wrap_phase(flipped - target).abs();
        let (chosen_tau, chosen_phase, margin) = if d_base <= d_flip {
            (tau, base, d_base)
        } else {
            (-tau, flipped, d_flip)
        };
        if phase_estimate_rad.is_none()
            && as_f64((margin - T::FRAC_PI_2()).abs()) < QUADRATURE_GUARD_RAD
        {
            ambiguous.push(f64_freq);
        }
        taus.push(chosen_tau);
        phases.push(chosen_phase);
    }

    if !ambiguous.is_empty() {
        return Err(Error::RootAmbiguity(ambiguous));
    }

    // Continuity pass: a genuine response cannot jump half a turn between
    // neighbouring grid points, so any such jump is a wrong root.
    for k in 1..n {
        let jump = wrap_phase(phases[k] - phases[k - 1]).abs();
        if jump > T::FRAC_PI_2() {
            taus[k] = -taus[k];
            phases[k] = wrap_phase(phases[k] + T::PI());
        }
    }

    let points = (0..n)
        .map(|k| {
            let product = port1[k].tracking * port2[k].tracking;
            ErrorPoint {
                freq_hz: freqs_hz[k],
                e00: port1[k].directivity,
                e11: port1[k].source_match,
                e10e01: port1[k].tracking,
                e33: port2[k].directivity,
                e22: port2[k].source_match,
                e23e32: port2[k].tracking,
                e10e32: taus[k],
                e23e01: product / taus[k],
            }
        })
        .collect();
    Ok(ErrorBoxes { z0_ohm, points })
}

/// Predicts the raw instrument reading for a known device.
///
/// Uses the closed-form eight-term forward model, which stays finite for
/// devices with zero transmission (reflection standards included):
///
/// ```text
/// D   = (1 − e11·S11)(1 − e22·S22) − e11·e22·S12·S21
/// M11 = e00 + e10e01·(S11 − e22·det S)/D      M21 = e10e32·S21/D
/// M22 = e33 + e23e32·(S22 − e11·det S)/D      M12 = e23e01·S12/D
/// ```
pub fn embed<T: Scalar>(device: &TwoPort<T>, boxes: &ErrorBoxes<T>) -> Result<TwoPort<T>> {
    boxes.check_grid(&device.freqs_hz)?;
    let one = Complex::new(T::one(), T::zero());
    let mut points = Vec::with_capacity(device.len());
    for (p, e) in device.points.iter().zip(&boxes.points) {
        let det = p.det();
        let d = (one - e.e11 * p.s11) * (one - e.e22 * p.s22) - e.e11 * e.e22 * p.s12 * p.s21;
        if as_f64(d.norm_sqr()) == 0.0 {
            return Err(Error::Singular {
                freq_hz: as_f64(e.freq_hz),
                msg: "device and error boxes form a divergent loop".into(),
            });
        }
        points.push(SPoint {
            s11: e.e00 + e.e10e01 * (p.s11 - e.e22 * det) / d,
            s21: e.e10e32 * p.s21 / d,
            s12: e.e23e01 * p.s12 / d,
            s22: e.e33 + e.e23e32 * (p.s22 - e.e11 * det) / d,
        });
    }
    TwoPort::new(boxes.z0_ohm, device.freqs_hz.clone(), points)
}

/// A correction applied where the full two-port route was unavailable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFlag {
    pub index: usize,
    pub freq_hz: f64,
    pub reason: String,
}

/// De-embedded network plus any per-frequency fallback notes.
#[derive(Clone, Debug)]
pub struct CorrectedNetwork<T> {
    pub network: TwoPort<T>,
    pub flags: Vec<CorrectionFlag>,
}

fn one_port_correct<T: Scalar>(
    raw: Complex<T>,
    directivity: Complex<T>,
    source_match: Complex<T>,
    tracking: Complex<T>,
) -> Complex<T> {
    let num = raw - directivity;
    num / (source_match * num + tracking)
}

/// Removes the error boxes from a raw measurement.
///
/// The general route works through wave-cascade matrices,
/// `T_D = e10e32 · Ã⁻¹ · T_M · B̃⁻¹`. Points where the raw transmission
/// vanishes have no invertible cascade form; those fall back to
/// reflection-only correction on each port (transmission set to zero) and
/// are flagged rather than failing the whole sweep.
pub fn deembed<T: Scalar>(raw: &TwoPort<T>, boxes: &ErrorBoxes<T>) -> Result<CorrectedNetwork<T>> {
    boxes.check_grid(&raw.freqs_hz)?;
    let mut points = Vec::with_capacity(raw.len());
    let mut flags = Vec::new();
    for (k, (m, e)) in raw.points.iter().zip(&boxes.points).enumerate() {
        let t1 = OnePortTerms {
            directivity: e.e00,
            source_match: e.e11,
            tracking: e.e10e01,
        };
        let t2 = OnePortTerms {
            directivity: e.e33,
            source_match: e.e22,
            tracking: e.e23e32,
        };
        let fallback = |reason: &str, flags: &mut Vec<CorrectionFlag>| {
            flags.push(CorrectionFlag {
                index: k,
                freq_hz: as_f64(e.freq_hz),
                reason: reason.into(),
            });
            SPoint {
                s11: one_port_correct(m.s11, t1.directivity, t1.source_match, t1.tracking),
                s12: Complex::new(T::zero(), T::zero()),
                s21: Complex::new(T::zero(), T::zero()),
                s22: one_port_correct(m.s22, t2.directivity, t2.source_match, t2.tracking),
            }
        };
        if m.s21.norm_sqr() == T::zero() {
            points.push(fallback(
                "no raw transmission; reflection-only correction",
                &mut flags,
            ));
            continue;
        }
        let inv_pair = (a_tilde(&t1).inv(), b_tilde(&t2).inv());
        let (Some(a_inv), Some(b_inv)) = inv_pair else {
            return Err(Error::Singular {
                freq_hz: as_f64(e.freq_hz),
                msg: "error box has zero reflection tracking".into(),
            });
        };
        let Some(t_m) = m.to_transfer() else {
            points.push(fallback(
                "raw point not representable as a cascade matrix",
                &mut flags,
            ));
            continue;
        };
        let core = a_inv.mul(&t_m).mul(&b_inv);
        let t_d = Mat2 {
            a: e.e10e32 * core.a,
            b: e.e10e32 * core.b,
            c: e.e10e32 * core.c,
            d: e.e10e32 * core.d,
        };
        match SPoint::from_transfer(&t_d) {
            Some(p) => points.push(p),
            None => points.push(fallback(
                "corrected point diverges; reflection-only correction",
                &mut flags,
            )),
        }
    }
    Ok(CorrectedNetwork {
        network: TwoPort::new(boxes.z0_ohm, raw.freqs_hz.clone(), points)?,
        flags,
    })
}

/// Full SOLR calibration from four raw two-port measurements.
///
/// `raw_short`, `raw_open`, and `raw_load` are instrument readings with the
/// named standard presented at *both* ports; `raw_reciprocal` is any
/// reciprocal two-port (a thru line works). Port 1 terms come from the S11
/// traces, port 2 terms from the S22 traces.
pub fn calibrate_solr<T: Scalar>(
    raw_short: &TwoPort<T>,
    raw_open: &TwoPort<T>,
    raw_load: &TwoPort<T>,
    raw_reciprocal: &TwoPort<T>,
    standards: &OnePortStandards<T>,
    phase_estimate_rad: Option<&[T]>,
) -> Result<ErrorBoxes<T>> {
    let freqs = &raw_short.freqs_hz;
    for other in [raw_open, raw_load, raw_reciprocal] {
        if other.freqs_hz != *freqs {
            return Err(Error::Grid(
                "all raw calibration measurements must share one frequency grid".into(),
            ));
        }
    }
    let trace = |net: &TwoPort<T>, port1: bool| -> Vec<Complex<T>> {
        net.points
            .iter()
            .map(|p| if port1 { p.s11 } else { p.s22 })
            .collect()
    };
    let port1 = solve_one_port(
        freqs,
        &trace(raw_short, true),
        &trace(raw_open, true),
        &trace(raw_load, true),
        standards,
    )?;
    let port2 = solve_one_port(
        freqs,
        &trace(raw_short, false),
        &trace(raw_open, false),
        &trace(raw_load, false),
        standards,
    )?;
    solve_solr(
        raw_short.z0_ohm,
        freqs,
        &port1,
        &port2,
        raw_reciprocal,
        phase_estimate_rad,
    )
}
