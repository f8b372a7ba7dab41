//! Photon-flux noise laws, quantum limits, and PSD conversions.
//!
//! Noise is expressed throughout as a symmetrized photon flux: photon number
//! per unit time per unit bandwidth, with vacuum contributing 1/2. Conversion
//! to a power spectral density is `N·ħω`.

use serde::{Deserialize, Serialize};

use crate::constants::{boltzmann, elementary_charge, hbar};
use crate::error::{Error, Result};
use crate::scalar::{as_f64, cast, Scalar};

/// Ordinary frequency in Hz, validated strictly positive and finite.
///
/// All formulas use the angular frequency `ω = 2π·f` internally; keeping the
/// public API in Hz matches instrument files and Touchstone data.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Frequency<T>(T);

impl<T: Scalar> Frequency<T> {
    /// Builds a frequency from a value in Hz.
    pub fn new(hz: T) -> Result<Self> {
        if !(hz.is_finite() && hz > T::zero()) {
            return Err(Error::Domain(format!(
                "frequency must be finite and positive, got {hz}"
            )));
        }
        Ok(Self(hz))
    }

    /// Value in Hz.
    #[inline]
    pub fn hz(self) -> T {
        self.0
    }

    /// Angular frequency `2π·f` in rad/s.
    #[inline]
    pub fn angular(self) -> T {
        cast::<T>(2.0) * T::PI() * self.0
    }

    /// Photon energy `ħω` in J (equivalently the PSD of one photon per
    /// second per hertz, in W/Hz).
    #[inline]
    pub fn photon_energy(self) -> T {
        hbar::<T>() * self.angular()
    }
}

/// Drive kind of a variable noise source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Temperature-controlled thermal emitter.
    Thermal,
    /// Voltage-biased shot-noise emitter.
    Shot,
}

fn check_temperature<T: Scalar>(temp_k: T) -> Result<()> {
    if !(temp_k.is_finite() && temp_k >= T::zero()) {
        return Err(Error::Domain(format!(
            "temperature must be finite and non-negative, got {temp_k} K"
        )));
    }
    Ok(())
}

/// Thermal occupation of a matched load: `(1/2)·coth(ħω/(2k_B T))`.
///
/// Evaluated as `1/2 + 1/(e^(ħω/k_B T) − 1)` for numerical stability; the
/// `T = 0` vacuum limit of exactly 1/2 is taken analytically.
pub fn planck_occupation<T: Scalar>(f: Frequency<T>, temp_k: T) -> Result<T> {
    check_temperature(temp_k)?;
    if temp_k == T::zero() {
        return Ok(cast(0.5));
    }
    let x = f.photon_energy() / (boltzmann::<T>() * temp_k);
    Ok(cast::<T>(0.5) + x.exp_m1().recip())
}

/// Shot-noise occupation of a symmetrized voltage-biased tunnel junction:
/// `(1/(4ħω))·Σ_± (eV ± ħω)·coth((eV ± ħω)/(2k_B T))`.
///
/// Reduces to [`planck_occupation`] at `V = 0` and approaches
/// `e|V|/(2ħω)` once `e|V| ≫ ħω, k_B T`.
pub fn shot_occupation<T: Scalar>(f: Frequency<T>, bias_v: T, temp_k: T) -> Result<T> {
    check_temperature(temp_k)?;
    if !bias_v.is_finite() {
        return Err(Error::Domain(format!("bias must be finite, got {bias_v} V")));
    }
    let hw = f.photon_energy();
    let ev = elementary_charge::<T>() * bias_v;
    // x·coth(x/(2k_B T)) = x + 2x/(e^(x/k_B T) − 1), with limits 2k_B T at
    // x = 0 and |x| at T = 0.
    let term = |x: T| -> T {
        if temp_k == T::zero() {
            return x.abs();
        }
        let kt = boltzmann::<T>() * temp_k;
        if x == T::zero() {
            return cast::<T>(2.0) * kt;
        }
        x + cast::<T>(2.0) * x / (x / kt).exp_m1()
    };
    Ok((term(ev + hw) + term(ev - hw)) / (cast::<T>(4.0) * hw))
}

/// Minimum added noise of a phase-insensitive linear amplifier with linear
/// power gain `G`: `|(G − 1)/(2G)|`.
pub fn quantum_limit<T: Scalar>(gain: T) -> Result<T> {
    if !gain.is_finite() || gain == T::zero() {
        return Err(Error::Domain(format!(
            "gain must be finite and nonzero, got {gain}"
        )));
    }
    Ok(((gain - T::one()) / (cast::<T>(2.0) * gain)).abs())
}

/// Output occupation of a non-ideal noise source embedded in a two-port,
/// with vacuum entering the far port:
/// `(1 − |S_out,out|²)·N_source + (1/2)·|S_thru|²`.
///
/// `reflect_sq` is `|S_pp|²` at the emitting port `p` and `transmit_sq` is
/// `|S_pq|²` from the far port `q`. The frequency-resolved variant lives on
/// [`crate::sparams::NoiseSourceModel`].
#[inline]
pub fn source_output_occupation<T: Scalar>(reflect_sq: T, transmit_sq: T, n_source: T) -> T {
    (T::one() - reflect_sq) * n_source + cast::<T>(0.5) * transmit_sq
}

/// Dimensionless drive strength of a variable noise source, normalized to
/// the signal photon energy: `ε = k_B·T/(ħω_s)` for a thermal source and
/// `ε = e·V/(2ħω_s)` for a voltage-biased junction.
///
/// Both source laws emit `N → |ε|` photons at `ω_s` once `|ε| ≫ 1`, which
/// makes ε the natural abscissa for comparing drives of different kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParameter<T> {
    pub epsilon: T,
    pub kind: SourceKind,
}

impl<T: Scalar> ControlParameter<T> {
    pub fn new(epsilon: T, kind: SourceKind) -> Result<Self> {
        if !epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "control parameter must be finite, got {epsilon}"
            )));
        }
        if kind == SourceKind::Thermal && epsilon < T::zero() {
            return Err(Error::Domain(format!(
                "thermal drive requires a non-negative control parameter, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, kind })
    }

    /// Thermal drive from a physical source temperature and the signal
    /// frequency that defines the normalization.
    pub fn from_temperature(temp_k: T, f_signal: Frequency<T>) -> Result<Self> {
        check_temperature(temp_k)?;
        let epsilon = boltzmann::<T>() * temp_k / f_signal.photon_energy();
        Self::new(epsilon, SourceKind::Thermal)
    }

    /// Voltage drive from a junction bias and the signal frequency.
    pub fn from_bias(bias_v: T, f_signal: Frequency<T>) -> Result<Self> {
        if !bias_v.is_finite() {
            return Err(Error::Domain(format!("bias must be finite, got {bias_v} V")));
        }
        let epsilon =
            elementary_charge::<T>() * bias_v / (cast::<T>(2.0) * f_signal.photon_energy());
        Self::new(epsilon, SourceKind::Shot)
    }

    /// Physical source temperature in K implied by a thermal drive.
    pub fn temperature_k(&self, f_signal: Frequency<T>) -> Result<T> {
        match self.kind {
            SourceKind::Thermal => Ok(self.epsilon * f_signal.photon_energy() / boltzmann::<T>()),
            SourceKind::Shot => Err(Error::Domain(
                "a voltage drive has no source temperature; use bias_v".into(),
            )),
        }
    }

    /// Junction bias in V implied by a voltage drive.
    pub fn bias_v(&self, f_signal: Frequency<T>) -> Result<T> {
        match self.kind {
            SourceKind::Shot => Ok(cast::<T>(2.0) * f_signal.photon_energy() * self.epsilon
                / elementary_charge::<T>()),
            SourceKind::Thermal => Err(Error::Domain(
                "a thermal drive has no junction bias; use temperature_k".into(),
            )),
        }
    }

    /// Occupation the drive emits at observation frequency `f`, with the
    /// normalization fixed by `f_signal`. A thermal drive follows the Planck
    /// law at the implied temperature; a voltage drive follows the junction
    /// shot-noise law at `junction_temp_k` (pass 0 for an ideal cold
    /// junction).
    pub fn source_occupation(
        &self,
        f: Frequency<T>,
        f_signal: Frequency<T>,
        junction_temp_k: T,
    ) -> Result<T> {
        match self.kind {
            SourceKind::Thermal => planck_occupation(f, self.temperature_k(f_signal)?),
            SourceKind::Shot => shot_occupation(f, self.bias_v(f_signal)?, junction_temp_k),
        }
    }
}

fn check_chain_point<T: Scalar>(gsys: T, tsys_k: T) -> Result<()> {
    if !(gsys.is_finite() && gsys > T::zero()) {
        return Err(Error::Domain(format!(
            "system gain must be finite and positive, got {gsys}"
        )));
    }
    if !tsys_k.is_finite() {
        return Err(Error::Domain(format!(
            "system noise temperature must be finite, got {tsys_k} K"
        )));
    }
    Ok(())
}

/// Measured PSD of a linear readout chain, `S = G_sys·(ħω·N + k_B·T_sys)`,
/// in W/Hz. `gsys` is linear power gain.
pub fn psd_from_occupation<T: Scalar>(n: T, f: Frequency<T>, gsys: T, tsys_k: T) -> Result<T> {
    check_chain_point(gsys, tsys_k)?;
    Ok(gsys * (f.photon_energy() * n + boltzmann::<T>() * tsys_k))
}

/// Exact inverse of [`psd_from_occupation`].
pub fn occupation_from_psd<T: Scalar>(psd: T, f: Frequency<T>, gsys: T, tsys_k: T) -> Result<T> {
    check_chain_point(gsys, tsys_k)?;
    Ok((psd / gsys - boltzmann::<T>() * tsys_k) / f.photon_energy())
}

/// Converts a power ratio in dB to linear, `10^(dB/10)`.
#[inline]
pub fn db_to_linear<T: Scalar>(db: T) -> T {
    cast::<T>(10.0).powf(db / cast::<T>(10.0))
}

/// Converts a linear power ratio to dB, `10·log10(x)`.
#[inline]
pub fn linear_to_db<T: Scalar>(linear: T) -> T {
    cast::<T>(10.0) * linear.log10()
}

/// Result of the qualification inequality at one frequency point; see
/// [`crate::sparams::TwoPort::source_qualification`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualificationPoint {
    pub freq_hz: f64,
    /// `|S_pq|²` leaking from the far port.
    pub transmit_sq: f64,
    /// `|S_pp|²` at the emitting port.
    pub reflect_sq: f64,
    /// Allowed leakage `threshold·(1 − |S_pp|²)`.
    pub limit: f64,
    pub pass: bool,
}

impl QualificationPoint {
    /// Evaluates `|S_pq|² ≤ threshold·(1 − |S_pp|²)` at one point.
    pub fn evaluate<T: Scalar>(freq_hz: T, reflect_sq: T, transmit_sq: T, threshold: T) -> Self {
        let limit = threshold * (T::one() - reflect_sq);
        Self {
            freq_hz: as_f64(freq_hz),
            transmit_sq: as_f64(transmit_sq),
            reflect_sq: as_f64(reflect_sq),
            limit: as_f64(limit),
            pass: transmit_sq <= limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn f5() -> Frequency<f64> {
        Frequency::new(5e9).unwrap()
    }

    #[test]
    fn planck_matches_room_temperature_table_value() {
        let n = planck_occupation(f5(), 295.0).unwrap();
        assert_relative_eq!(n, 1229.360596815498, max_relative = 1e-12);
        assert_relative_eq!(n, 1229.36, max_relative = 1e-3);
    }

    #[test]
    fn planck_vacuum_limit_is_exactly_half() {
        assert_eq!(planck_occupation(f5(), 0.0).unwrap(), 0.5);
        let n = planck_occupation(f5(), 0.02).unwrap();
        assert_relative_eq!(n, 0.5000061558880959, max_relative = 1e-12);
    }

    #[test]
    fn planck_rejects_negative_temperature_and_bad_frequency() {
        assert!(planck_occupation(f5(), -1.0).is_err());
        assert!(Frequency::new(0.0).is_err());
        assert!(Frequency::new(-5e9).is_err());
        assert!(Frequency::new(f64::NAN).is_err());
    }

    #[test]
    fn planck_high_temperature_asymptote() {
        // k_B T/(ħω) > 100 must match the equipartition value to 1e-4.
        let f = f5();
        for t in [30.0, 100.0, 295.0, 1000.0] {
            let classical = crate::constants::BOLTZMANN * t / f.photon_energy();
            if classical > 100.0 {
                let n = planck_occupation(f, t).unwrap();
                assert!((n - classical).abs() / classical < 1e-4);
            }
        }
    }

    #[test]
    fn shot_reduces_to_planck_at_zero_bias() {
        for t in [0.02, 0.05, 1.0, 295.0] {
            let a = shot_occupation(f5(), 0.0, t).unwrap();
            let b = planck_occupation(f5(), t).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        // T = 0, V = 0 still reproduces the vacuum.
        assert_relative_eq!(shot_occupation(f5(), 0.0, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn shot_matches_large_bias_asymptote() {
        let f = f5();
        let eps = 100.0;
        let v = 2.0 * f.photon_energy() * eps / crate::constants::ELEMENTARY_CHARGE;
        let n = shot_occupation(f, v, 0.02).unwrap();
        assert_relative_eq!(n, eps, max_relative = 1e-2);
        // Frozen from an independent high-precision evaluation.
        assert_relative_eq!(n, 100.0, max_relative = 1e-12);
        let v1 = 2.0 * f.photon_energy() / crate::constants::ELEMENTARY_CHARGE;
        let n1 = shot_occupation(f, v1, 0.05).unwrap();
        assert_relative_eq!(n1, 1.004153024681184, max_relative = 1e-12);
    }

    #[test]
    fn quantum_limit_examples() {
        assert_eq!(quantum_limit(1.0).unwrap(), 0.0);
        assert_relative_eq!(quantum_limit(1e6).unwrap(), 0.4999995, max_relative = 1e-12);
        assert_relative_eq!(quantum_limit(2.0).unwrap(), 0.25);
        assert!(quantum_limit(0.0).is_err());
    }

    #[test]
    fn quantum_limit_below_half_and_monotone() {
        let mut last = 0.0;
        for g_db in 1..80 {
            let q = quantum_limit(db_to_linear(g_db as f64)).unwrap();
            assert!(q < 0.5);
            assert!(q > last);
            last = q;
        }
    }

    #[test]
    fn source_output_examples() {
        assert_relative_eq!(source_output_occupation(0.0, 0.0, 10.0), 10.0);
        assert_relative_eq!(source_output_occupation(1.0, 0.0, 42.0), 0.0);
        assert_relative_eq!(source_output_occupation(0.5, 0.1, 1.0), 0.55, max_relative = 1e-12);
    }

    #[test]
    fn psd_conversion_examples_and_roundtrip() {
        let s = psd_from_occupation(1.0, f5(), 1.0, 0.0).unwrap();
        assert_relative_eq!(s, 3.31303507297004e-24, max_relative = 1e-12);

        let f4 = Frequency::new(4e9).unwrap();
        let gsys = db_to_linear(70.9);
        let s = psd_from_occupation(0.5, f4, gsys, 4.65).unwrap();
        let expected = gsys * (0.5 * f4.photon_energy() + crate::constants::BOLTZMANN * 4.65);
        assert_relative_eq!(s, expected, max_relative = 1e-12);

        let n = occupation_from_psd(s, f4, gsys, 4.65).unwrap();
        assert_relative_eq!(n, 0.5, max_relative = 1e-12);
        assert!(psd_from_occupation(1.0, f5(), 0.0, 0.0).is_err());
    }

    #[test]
    fn db_helpers_roundtrip() {
        assert_relative_eq!(db_to_linear(-3.0), 0.5011872336272722, max_relative = 1e-12);
        assert_relative_eq!(linear_to_db(db_to_linear(-12.5)), -12.5, max_relative = 1e-12);
    }

    #[test]
    fn generic_kernels_compile_in_f32() {
        let f = Frequency::<f32>::new(5e9).unwrap();
        let n = planck_occupation(f, 295.0f32).unwrap();
        assert!((n - 1229.36).abs() / 1229.36 < 1e-3);
    }

    #[test]
    fn control_parameter_temperature_roundtrip() {
        let fs = Frequency::new(4e9).unwrap();
        let cold = ControlParameter::from_temperature(0.02, fs).unwrap();
        assert_relative_eq!(cold.epsilon, 0.1041830956804728, max_relative = 1e-12);
        let hot = ControlParameter::from_temperature(2.0, fs).unwrap();
        assert_relative_eq!(hot.epsilon, 10.41830956804729, max_relative = 1e-12);
        assert_relative_eq!(hot.temperature_k(fs).unwrap(), 2.0, max_relative = 1e-12);
        // Occupation at the signal frequency equals the Planck law directly.
        let n = hot.source_occupation(fs, fs, 0.0).unwrap();
        assert_relative_eq!(n, planck_occupation(fs, 2.0).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn control_parameter_bias_roundtrip() {
        let fs = Frequency::new(4e9).unwrap();
        let drive = ControlParameter::from_bias(50e-6, fs).unwrap();
        assert_eq!(drive.kind, SourceKind::Shot);
        assert_relative_eq!(drive.bias_v(fs).unwrap(), 50e-6, max_relative = 1e-12);
        let n = drive.source_occupation(fs, fs, 0.05).unwrap();
        assert_relative_eq!(
            n,
            shot_occupation(fs, 50e-6, 0.05).unwrap(),
            max_relative = 1e-14
        );
        // Kind mismatches are domain errors, not silent conversions.
        assert!(drive.temperature_k(fs).is_err());
        assert!(ControlParameter::new(1.0, SourceKind::Thermal)
            .unwrap()
            .bias_v(fs)
            .is_err());
    }

    #[test]
    fn control_parameter_rejects_negative_thermal_drive() {
        assert!(ControlParameter::new(-0.1, SourceKind::Thermal).is_err());
        assert!(ControlParameter::new(-0.1, SourceKind::Shot).is_ok());
        assert!(ControlParameter::new(f64::NAN, SourceKind::Shot).is_err());
    }

    #[test]
    fn control_parameter_occupation_approaches_magnitude() {
        // Both drive kinds emit N → |ε| photons at the signal frequency.
        let fs = Frequency::new(4e9).unwrap();
        for eps in [100.0f64, 1000.0] {
            for kind in [SourceKind::Thermal, SourceKind::Shot] {
                let eps_signed = if kind == SourceKind::Shot { -eps } else { eps };
                let drive = ControlParameter::new(eps_signed, kind).unwrap();
                let n = drive.source_occupation(fs, fs, 0.0).unwrap();
                assert!(
                    (n - eps).abs() / eps < 1e-2,
                    "kind {kind:?}, eps {eps}: got {n}"
                );
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn planck_monotone_in_temperature_and_frequency(
                f_ghz in 0.1..50.0f64,
                t in 0.001..400.0f64,
                dt in 0.001..50.0f64,
                df_ghz in 0.01..10.0f64,
            ) {
                let f = Frequency::new(f_ghz * 1e9).unwrap();
                let n0 = planck_occupation(f, t).unwrap();
                let n1 = planck_occupation(f, t + dt).unwrap();
                prop_assert!(n1 > n0, "occupation must grow with T: {} !> {}", n1, n0);
                let fhi = Frequency::new((f_ghz + df_ghz) * 1e9).unwrap();
                let nf = planck_occupation(fhi, t).unwrap();
                prop_assert!(nf < n0, "occupation must fall with f: {} !< {}", nf, n0);
                prop_assert!(n0 >= 0.5);
            }

            #[test]
            fn shot_is_even_in_bias(
                f_ghz in 0.1..50.0f64,
                v_uv in -500.0..500.0f64,
                t in 0.0..10.0f64,
            ) {
                let f = Frequency::new(f_ghz * 1e9).unwrap();
                let v = v_uv * 1e-6;
                let a = shot_occupation(f, v, t).unwrap();
                let b = shot_occupation(f, -v, t).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                prop_assert!(a >= 0.5 * (1.0 - 1e-12));
            }

            #[test]
            fn source_output_bounded_for_passive_two_port(
                s22_sq in 0.0..1.0f64,
                margin in 0.0..1.0f64,
                n_source in 0.5..1e4f64,
            ) {
                // Passivity: |S21|² + |S22|² ≤ 1 at the emitting port.
                let s21_sq = margin * (1.0 - s22_sq);
                let n = source_output_occupation(s22_sq, s21_sq, n_source);
                prop_assert!(n >= 0.0);
                prop_assert!(n <= n_source + 0.5);
            }
        }
    }
}
