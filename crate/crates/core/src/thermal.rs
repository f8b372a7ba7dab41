//! Thermal-occupation cascade through the attenuating input lines of a
//! refrigerator, plus the forward model of a calibrated readout chain.
//!
//! Each attenuating stage partially thermalizes the noise travelling down
//! the line: with linear power transmission `A` and stage temperature `T`,
//!
//! ```text
//! N_i = A·N_{i−1} + (1 − A)·N_therm(f, T_i)
//! ```
//!
//! starting from the blackbody occupation at the source temperature. The
//! readout-chain side is the affine map from occupation at the reference
//! plane to detected power spectral density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bracket, check_ascending};
use crate::physics::{db_to_linear, planck_occupation, psd_from_occupation, Frequency};
use crate::scalar::{cast, Scalar};

/// One thermal stage of an input line: an attenuator lump plus a cable run,
/// both thermalized at the stage temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalStage<T> {
    pub name: String,
    pub temperature_k: T,
    pub a_lump_db: T,
    pub length_m: T,
    pub alpha_db_per_m: T,
}

impl<T: Scalar> ThermalStage<T> {
    pub fn new(
        name: impl Into<String>,
        temperature_k: T,
        a_lump_db: T,
        length_m: T,
        alpha_db_per_m: T,
    ) -> Result<Self> {
        let stage = ThermalStage {
            name: name.into(),
            temperature_k,
            a_lump_db,
            length_m,
            alpha_db_per_m,
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (self.temperature_k, "stage temperature"),
            (self.a_lump_db, "lumped attenuation"),
            (self.length_m, "cable length"),
            (self.alpha_db_per_m, "cable attenuation"),
        ];
        for (value, what) in fields {
            if !(value.is_finite() && value >= T::zero()) {
                return Err(Error::Domain(format!(
                    "{what} of stage '{}' must be finite and nonnegative, got {value}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Lumped plus distributed attenuation, in dB.
    pub fn total_attenuation_db(&self) -> T {
        self.a_lump_db + self.alpha_db_per_m * self.length_m
    }

    /// Linear power transmission of the stage.
    pub fn power_transmission(&self) -> T {
        db_to_linear(-self.total_attenuation_db())
    }
}

/// An ordered input line, listed from the warm end inward.
///
/// By convention the leading stage restates the room-temperature reference
/// (it sits at the source temperature, so its attenuation drops noise power
/// and blackbody reemission in equal measure and leaves the occupation
/// unchanged).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec<T> {
    pub source_temperature_k: T,
    pub stages: Vec<ThermalStage<T>>,
}

impl<T: Scalar> ChainSpec<T> {
    pub fn new(source_temperature_k: T, stages: Vec<ThermalStage<T>>) -> Result<Self> {
        let spec = ChainSpec { source_temperature_k, stages };
        spec.validate()?;
        if spec.stages.is_empty() {
            return Err(Error::Domain("chain has no stages".into()));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_temperature_k.is_finite() && self.source_temperature_k >= T::zero()) {
            return Err(Error::Domain(format!(
                "source temperature must be finite and nonnegative, got {}",
                self.source_temperature_k
            )));
        }
        for stage in &self.stages {
            stage.validate()?;
        }
        Ok(())
    }

    /// A representative dilution-refrigerator drive line: attenuators at
    /// the 3 K, still, and cold plates, lossy cupronickel cable runs
    /// between stages, and a final attenuator on the cold finger.
    pub fn demo_input_line() -> Self {
        let c = cast::<T>;
        let rows: [(&str, f64, f64, f64, f64); 7] = [
            ("RT", 295.0, 15.0, 5.0, 0.85),
            ("50K", 50.0, 0.0, 0.25, 18.98),
            ("3K", 2.55, 10.0, 0.15, 18.98),
            ("Still", 0.82, 10.0, 0.10, 18.98),
            ("CP", 0.13, 10.0, 0.10, 18.98),
            ("MXC", 0.02, 0.0, 0.15, 18.98),
            ("ColdFinger", 0.07, 10.0, 0.0, 0.0),
        ];
        ChainSpec {
            source_temperature_k: c(295.0),
            stages: rows
                .iter()
                .map(|&(name, t, lump, len, alpha)| ThermalStage {
                    name: name.into(),
                    temperature_k: c(t),
                    a_lump_db: c(lump),
                    length_m: c(len),
                    alpha_db_per_m: c(alpha),
                })
                .collect(),
        }
    }

    pub fn total_attenuation_db(&self) -> T {
        self.stages
            .iter()
            .fold(T::zero(), |acc, s| acc + s.total_attenuation_db())
    }
}

/// Runs the stage recursion at one frequency.
///
/// Returns the full trajectory: element 0 is the source occupation, then
/// one element per stage in order, so the result has `stages + 1` entries.
pub fn cascade_occupation<T: Scalar>(spec: &ChainSpec<T>, f: Frequency<T>) -> Result<Vec<T>> {
    spec.validate()?;
    let mut trajectory = Vec::with_capacity(spec.stages.len() + 1);
    let mut n = planck_occupation(f, spec.source_temperature_k)?;
    trajectory.push(n);
    for stage in &spec.stages {
        let a = stage.power_transmission();
        n = a * n + (T::one() - a) * planck_occupation(f, stage.temperature_k)?;
        trajectory.push(n);
    }
    Ok(trajectory)
}

/// Renders the per-stage budget at one frequency as CSV.
///
/// Column order is fixed:
/// `stage,T_K,A_lump_dB,length_m,alpha_dB_per_m,A_tot_dB,N_photons`.
/// An empty chain yields the header alone.
pub fn stage_table_report<T: Scalar>(spec: &ChainSpec<T>, f: Frequency<T>) -> Result<String> {
    let trajectory = cascade_occupation(spec, f)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "stage",
        "T_K",
        "A_lump_dB",
        "length_m",
        "alpha_dB_per_m",
        "A_tot_dB",
        "N_photons",
    ])
    .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    for (stage, n) in spec.stages.iter().zip(trajectory.iter().skip(1)) {
        wtr.write_record([
            stage.name.clone(),
            format!("{}", stage.temperature_k),
            format!("{}", stage.a_lump_db),
            format!("{}", stage.length_m),
            format!("{}", stage.alpha_db_per_m),
            format!("{}", stage.total_attenuation_db()),
            format!("{n}"),
        ])
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Domain(format!("csv not utf-8: {e}")))
}

/// Interpolated readout-chain parameters at one frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainPoint<T> {
    pub gsys_linear: T,
    pub tsys_k: T,
    pub sigma_gsys: Option<T>,
    pub sigma_tsys: Option<T>,
}

/// Calibrated gain and noise temperature of a readout chain over a
/// frequency grid, with optional 1σ uncertainties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutChainParams<T> {
    pub freqs_hz: Vec<T>,
    pub gsys_linear: Vec<T>,
    pub tsys_k: Vec<T>,
    #[serde(default = "Option::default")]
    pub sigma_gsys: Option<Vec<T>>,
    #[serde(default = "Option::default")]
    pub sigma_tsys: Option<Vec<T>>,
}

impl<T: Scalar> ReadoutChainParams<T> {
    pub fn new(
        freqs_hz: Vec<T>,
        gsys_linear: Vec<T>,
        tsys_k: Vec<T>,
        sigma_gsys: Option<Vec<T>>,
        sigma_tsys: Option<Vec<T>>,
    ) -> Result<Self> {
        let params = ReadoutChainParams { freqs_hz, gsys_linear, tsys_k, sigma_gsys, sigma_tsys };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_ascending(&self.freqs_hz)?;
        let n = self.freqs_hz.len();
        if self.gsys_linear.len() != n || self.tsys_k.len() != n {
            return Err(Error::Grid(format!(
                "gain/noise vectors must match the {n}-point frequency grid"
            )));
        }
        for sigma in [&self.sigma_gsys, &self.sigma_tsys].into_iter().flatten() {
            if sigma.len() != n {
                return Err(Error::Grid(format!(
                    "uncertainty vector must match the {n}-point frequency grid"
                )));
            }
            if sigma.iter().any(|s| !(s.is_finite() && *s >= T::zero())) {
                return Err(Error::Domain("uncertainties must be finite and nonnegative".into()));
            }
        }
        for g in &self.gsys_linear {
            if !(g.is_finite() && *g > T::zero()) {
                return Err(Error::Domain(format!("system gain must be positive, got {g}")));
            }
        }
        for t in &self.tsys_k {
            if !(t.is_finite() && *t >= T::zero()) {
                return Err(Error::Domain(format!(
                    "system noise temperature must be nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// Linear interpolation of all stored quantities at `f_hz`.
    pub fn at(&self, f_hz: T) -> Result<ChainPoint<T>> {
        let (lo, hi, w) = bracket(&self.freqs_hz, f_hz)?;
        let mix = |v: &[T]| v[lo] + (v[hi] - v[lo]) * w;
        Ok(ChainPoint {
            gsys_linear: mix(&self.gsys_linear),
            tsys_k: mix(&self.tsys_k),
            sigma_gsys: self.sigma_gsys.as_deref().map(mix),
            sigma_tsys: self.sigma_tsys.as_deref().map(mix),
        })
    }
}

/// Detected PSD for a given occupation at the chain's reference plane.
pub fn chain_forward_psd<T: Scalar>(
    chain: &ReadoutChainParams<T>,
    n_at_plane: T,
    f: Frequency<T>,
) -> Result<T> {
    let point = chain.at(f.hz())?;
    psd_from_occupation(n_at_plane, f, point.gsys_linear, point.tsys_k)
}

#[cfg(test)]
mod tests {
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    use crate::physics::planck_occupation;

    use super::*;

    fn hz(f: f64) -> Frequency<f64> {
        Frequency::new(f).unwrap()
    }

    // Stage-by-stage occupations of the demo line at 5 GHz, frozen from an
    // independent reimplementation of the recursion.
    const DEMO_LINE_5GHZ: [f64; 7] = [
        1229.3605968154982,
        550.7582628843,
        38.6755019055,
        5.717499610172,
        1.012406142164,
        0.7660229831763,
        0.5567875358634,
    ];

    #[test]
    fn demo_line_matches_frozen_trajectory() {
        let spec = ChainSpec::<f64>::demo_input_line();
        let traj = cascade_occupation(&spec, hz(5e9)).unwrap();
        assert_eq!(traj.len(), 8);
        // Source occupation, then the no-op room-temperature stage.
        assert_relative_eq!(traj[0], DEMO_LINE_5GHZ[0], max_relative = 1e-12);
        assert_relative_eq!(traj[1], DEMO_LINE_5GHZ[0], max_relative = 1e-12);
        for (have, want) in traj[1..].iter().zip(&DEMO_LINE_5GHZ) {
            assert_relative_eq!(have, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn demo_line_matches_published_budget() {
        // Rounded per-stage occupations and total attenuation as published
        // for this line; 1% absorbs the rounding.
        let published = [1229.36, 550.80, 38.70, 5.72, 1.02, 0.77, 0.56];
        let spec = ChainSpec::<f64>::demo_input_line();
        let traj = cascade_occupation(&spec, hz(5e9)).unwrap();
        for (have, want) in traj[1..].iter().zip(&published) {
            assert_relative_eq!(have, want, max_relative = 1e-2);
        }
        assert_abs_diff_eq!(spec.total_attenuation_db(), 73.485, epsilon = 1e-9);
        assert_abs_diff_eq!(spec.total_attenuation_db(), 73.48, epsilon = 0.01);
    }

    #[test]
    fn lossless_stage_is_transparent() {
        let spec = ChainSpec::new(
            100.0,
            vec![ThermalStage::new("pass", 1.0, 0.0, 0.0, 0.0).unwrap()],
        )
        .unwrap();
        let traj = cascade_occupation(&spec, hz(5e9)).unwrap();
        assert_eq!(traj[1], traj[0]);
    }

    #[test]
    fn infinite_attenuation_fully_thermalizes() {
        let spec = ChainSpec::new(
            300.0,
            vec![ThermalStage::new("sink", 0.1, 1e6, 0.0, 0.0).unwrap()],
        )
        .unwrap();
        let traj = cascade_occupation(&spec, hz(5e9)).unwrap();
        let expected = planck_occupation(hz(5e9), 0.1).unwrap();
        assert_relative_eq!(traj[1], expected, max_relative = 1e-12);
    }

    #[test]
    fn stage_order_matters_except_at_equal_temperature() {
        let mut spec = ChainSpec::<f64>::demo_input_line();
        let base = *cascade_occupation(&spec, hz(5e9)).unwrap().last().unwrap();
        // Distinct temperatures: swapping changes the answer.
        spec.stages.swap(2, 4);
        let swapped = *cascade_occupation(&spec, hz(5e9)).unwrap().last().unwrap();
        assert!((swapped - base).abs() > 1e-6 * base);

        // Equal temperatures: attenuation order is irrelevant.
        let twin = |a_db: f64| ThermalStage::new("twin", 0.5, a_db, 0.0, 0.0).unwrap();
        let fwd = ChainSpec::new(300.0, vec![twin(3.0), twin(11.0)]).unwrap();
        let rev = ChainSpec::new(300.0, vec![twin(11.0), twin(3.0)]).unwrap();
        let n_fwd = *cascade_occupation(&fwd, hz(5e9)).unwrap().last().unwrap();
        let n_rev = *cascade_occupation(&rev, hz(5e9)).unwrap().last().unwrap();
        assert_relative_eq!(n_fwd, n_rev, max_relative = 1e-12);
    }

    #[test]
    fn report_lists_each_stage_and_handles_empty_chains() {
        let spec = ChainSpec::<f64>::demo_input_line();
        let csv_text = stage_table_report(&spec, hz(5e9)).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "stage,T_K,A_lump_dB,length_m,alpha_dB_per_m,A_tot_dB,N_photons"
        );
        assert_eq!(lines.count(), 7);
        assert!(csv_text.contains("ColdFinger,0.07,10,0,0,10,"));

        let empty = ChainSpec { source_temperature_k: 295.0, stages: vec![] };
        let head_only = stage_table_report(&empty, hz(5e9)).unwrap();
        assert_eq!(head_only.lines().count(), 1);
    }

    #[test]
    fn one_stage_report_matches_hand_recursion() {
        let stage = ThermalStage::new("only", 4.0, 3.0, 2.0, 1.5).unwrap();
        assert_abs_diff_eq!(stage.total_attenuation_db(), 6.0, epsilon = 1e-12);
        let spec = ChainSpec::new(77.0, vec![stage]).unwrap();
        let f = hz(5e9);
        let a = 10f64.powf(-0.6);
        let expected =
            a * planck_occupation(f, 77.0).unwrap() + (1.0 - a) * planck_occupation(f, 4.0).unwrap();
        let traj = cascade_occupation(&spec, f).unwrap();
        assert_relative_eq!(traj[1], expected, max_relative = 1e-12);
        let report = stage_table_report(&spec, f).unwrap();
        let field = report.lines().nth(1).unwrap().split(',').next_back().unwrap().to_owned();
        assert_relative_eq!(field.parse::<f64>().unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn chain_params_interpolate_and_forward() {
        let chain = ReadoutChainParams::new(
            vec![4e9, 6e9],
            vec![1e7, 2e7],
            vec![4.0, 6.0],
            Some(vec![1e5, 3e5]),
            None,
        )
        .unwrap();
        let p = chain.at(5e9).unwrap();
        assert_relative_eq!(p.gsys_linear, 1.5e7, max_relative = 1e-12);
        assert_relative_eq!(p.tsys_k, 5.0, max_relative = 1e-12);
        assert_relative_eq!(p.sigma_gsys.unwrap(), 2e5, max_relative = 1e-12);
        assert!(p.sigma_tsys.is_none());
        assert!(chain.at(7e9).is_err());

        // Forward model with a representative calibration: 70.9 dB gain and
        // 4.65 K noise temperature at 4 GHz.
        let cal = ReadoutChainParams::new(
            vec![4e9],
            vec![10f64.powf(7.09)],
            vec![4.65],
            None,
            None,
        )
        .unwrap();
        let vacuum = chain_forward_psd(&cal, 0.5, hz(4e9)).unwrap();
        assert_relative_eq!(vacuum, 8.061384412388293e-16, max_relative = 1e-12);
        let warm = chain_forward_psd(&cal, 2.0, hz(4e9)).unwrap();
        assert_relative_eq!(warm, 8.550495242814033e-16, max_relative = 1e-12);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(ThermalStage::new("bad", -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(ThermalStage::new("bad", 1.0, -3.0, 0.0, 0.0).is_err());
        assert!(ChainSpec::new(295.0, vec![]).is_err());
        assert!(ReadoutChainParams::new(vec![1e9], vec![0.0], vec![1.0], None, None).is_err());
        assert!(ReadoutChainParams::new(vec![1e9], vec![1.0], vec![-1.0], None, None).is_err());
    }

    #[test]
    fn chain_spec_roundtrips_through_json() {
        let spec = ChainSpec::<f64>::demo_input_line();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ChainSpec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    proptest! {
        // Every stage output sits between the incoming occupation and the
        // stage's own blackbody level, and the cascade never dips below
        // vacuum.
        #[test]
        fn cascade_is_a_monotone_sandwich(
            temps in prop::collection::vec(0.01f64..300.0, 1..6),
            attens in prop::collection::vec(0.0f64..30.0, 6),
            t0 in 0.01f64..320.0,
        ) {
            let stages: Vec<ThermalStage<f64>> = temps
                .iter()
                .zip(&attens)
                .enumerate()
                .map(|(k, (&t, &a))| ThermalStage::new(format!("s{k}"), t, a, 0.0, 0.0).unwrap())
                .collect();
            let spec = ChainSpec::new(t0, stages).unwrap();
            let f = hz(5e9);
            let traj = cascade_occupation(&spec, f).unwrap();
            for (k, stage) in spec.stages.iter().enumerate() {
                let prev = traj[k];
                let here = traj[k + 1];
                let own = planck_occupation(f, stage.temperature_k).unwrap();
                let lo = prev.min(own) - 1e-12;
                let hi = prev.max(own) + 1e-12;
                prop_assert!(here >= lo && here <= hi, "stage {k}: {here} outside [{lo}, {hi}]");
                prop_assert!(here >= 0.5);
            }
        }
    }
}
