//! Bias analysis of affine readout calibrations performed through a
//! frequency-converting amplifier.
//!
//! When a pumped amplifier sits between the calibration source and the
//! readout, every intermodulation sideband of pump and signal scatters a
//! drive-dependent share of the source noise into the signal band. An
//! affine fit of measured power against the modeled two-mode source output
//! then misattributes that share, overestimating the dressed gain and
//! underestimating the zero-drive system noise. This module synthesizes the
//! full multimode dataset, quantifies the fit distortion analytically from
//! population moments of the model, cross-checks the result against a
//! brute-force least-squares oracle (the two routes must agree as an exact
//! algebraic identity), and evaluates the closed-form high-drive limit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::boltzmann;
use crate::error::{Error, Result};
use crate::physics::{ControlParameter, Frequency, SourceKind};
use crate::planck::affine_least_squares;
use crate::scalar::{as_f64, cast, Scalar};

/// One mixing product of signal and pump, `|ω_s + n·ω_p|`.
///
/// `n = 0` is the signal itself and `n = -1` the idler; every other index
/// is a spur that leaks source noise into the signal band. `x2_fwd` weights
/// input noise scattered forward to the signal, `x2_back` noise entering
/// from the output port and scattered back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec<T> {
    pub n: i32,
    pub freq_hz: T,
    /// Linear path transmission from the source plane at this frequency.
    pub a_n: T,
    pub x2_fwd: T,
    pub x2_back: T,
}

impl<T: Scalar> ModeSpec<T> {
    pub fn new(n: i32, freq_hz: T, a_n: T, x2_fwd: T, x2_back: T) -> Result<Self> {
        let mode = Self {
            n,
            freq_hz,
            a_n,
            x2_fwd,
            x2_back,
        };
        mode.validate()?;
        Ok(mode)
    }

    /// Builds the mode at its geometric frequency `|f_s + n·f_p|`.
    pub fn at_index(n: i32, f_s_hz: T, f_p_hz: T, a_n: T, x2_fwd: T, x2_back: T) -> Result<Self> {
        let freq_hz = (f_s_hz + cast::<T>(f64::from(n)) * f_p_hz).abs();
        Self::new(n, freq_hz, a_n, x2_fwd, x2_back)
    }

    pub fn validate(&self) -> Result<()> {
        Frequency::new(self.freq_hz)?;
        if !(self.x2_fwd.is_finite() && self.x2_fwd >= T::zero())
            || !(self.x2_back.is_finite() && self.x2_back >= T::zero())
        {
            return Err(Error::Domain(format!(
                "mode {} scattering weights must be finite and non-negative",
                self.n
            )));
        }
        if !(self.a_n.is_finite() && self.a_n > T::zero() && self.a_n <= T::one()) {
            return Err(Error::Domain(format!(
                "mode {} path transmission must lie in (0, 1], got {}",
                self.n, self.a_n
            )));
        }
        Ok(())
    }
}

/// Full model of a serial calibration through a pumped amplifier: the
/// device, the source paths at every relevant mixing product, the linear
/// readout behind it, and the drive grid the calibration sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SerialBiasConfig<T> {
    pub f_s_hz: T,
    pub f_p_hz: T,
    /// Linear power gain of the device under test.
    pub gain_linear: T,
    /// Path transmission source-to-device at the signal frequency.
    pub a_s: T,
    /// Path transmission source-to-device at the idler frequency.
    pub a_i: T,
    /// Mixing products, including the signal (`n = 0`) and idler (`n = -1`).
    pub modes: Vec<ModeSpec<T>>,
    /// Linear power gain of the readout chain behind the device.
    pub gsys_linear: T,
    /// Noise temperature of the readout chain, K.
    pub tsys_k: T,
    /// Drive strengths the calibration sweeps; at least two distinct values.
    pub epsilon_grid: Vec<ControlParameter<T>>,
    /// Junction temperature used when evaluating voltage drives, K.
    #[serde(default)]
    pub junction_temp_k: T,
    /// Constant dissipation-induced noise inside the device, photons.
    #[serde(default)]
    pub n_exc_loss: T,
}

impl<T: Scalar> SerialBiasConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let f_s = Frequency::new(self.f_s_hz)?;
        Frequency::new(self.f_p_hz)?;
        if !(self.gain_linear.is_finite() && self.gain_linear > T::zero()) {
            return Err(Error::Domain(format!(
                "device gain must be finite and positive, got {}",
                self.gain_linear
            )));
        }
        for (label, a) in [("signal", self.a_s), ("idler", self.a_i)] {
            if !(a.is_finite() && a > T::zero() && a <= T::one()) {
                return Err(Error::Domain(format!(
                    "{label} path transmission must lie in (0, 1], got {a}"
                )));
            }
        }
        if !(self.gsys_linear.is_finite() && self.gsys_linear > T::zero()) {
            return Err(Error::Domain(format!(
                "readout gain must be finite and positive, got {}",
                self.gsys_linear
            )));
        }
        if !(self.tsys_k.is_finite() && self.tsys_k >= T::zero()) {
            return Err(Error::Domain(format!(
                "readout noise temperature must be finite and non-negative, got {} K",
                self.tsys_k
            )));
        }
        if !(self.junction_temp_k.is_finite() && self.junction_temp_k >= T::zero()) {
            return Err(Error::Domain(
                "junction temperature must be finite and non-negative".into(),
            ));
        }
        if !(self.n_exc_loss.is_finite() && self.n_exc_loss >= T::zero()) {
            return Err(Error::Domain(
                "internal-loss noise must be finite and non-negative".into(),
            ));
        }
        for mode in &self.modes {
            mode.validate()?;
        }
        if self.idler().is_none() {
            return Err(Error::Domain(
                "mode set must contain the idler (n = -1)".into(),
            ));
        }
        for drive in &self.epsilon_grid {
            ControlParameter::new(drive.epsilon, drive.kind)?;
            if drive.kind == SourceKind::Shot {
                // Keep the junction temperature meaningful for the drive.
                drive.bias_v(f_s)?;
            }
        }
        let mut distinct = self
            .epsilon_grid
            .iter()
            .map(|d| d.epsilon)
            .collect::<Vec<_>>();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite by construction"));
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Domain(
                "drive grid must contain at least two distinct values".into(),
            ));
        }
        Ok(())
    }

    fn idler(&self) -> Option<&ModeSpec<T>> {
        self.modes.iter().find(|m| m.n == -1)
    }

    fn spurs(&self) -> impl Iterator<Item = &ModeSpec<T>> {
        self.modes.iter().filter(|m| m.n != 0 && m.n != -1)
    }

    /// Forward-path weight `A_n·|x_fwd|²/(A_s·G)` of one mode.
    fn spur_weight(&self, mode: &ModeSpec<T>) -> T {
        mode.a_n * mode.x2_fwd / (self.a_s * self.gain_linear)
    }

    /// Overall gain the affine fit estimates: readout × device × signal path.
    pub fn dressed_gain(&self) -> T {
        self.gsys_linear * self.gain_linear * self.a_s
    }

    fn source_occupation(&self, freq_hz: T, drive: ControlParameter<T>) -> Result<T> {
        drive.source_occupation(
            Frequency::new(freq_hz)?,
            Frequency::new(self.f_s_hz)?,
            self.junction_temp_k,
        )
    }
}

/// Source occupation referred to the device input plane that the affine
/// calibration models: signal plus path-weighted idler.
pub fn n_cal<T: Scalar>(cfg: &SerialBiasConfig<T>, drive: ControlParameter<T>) -> Result<T> {
    let idler = cfg
        .idler()
        .ok_or_else(|| Error::Domain("mode set must contain the idler (n = -1)".into()))?;
    let n_s = cfg.source_occupation(cfg.f_s_hz, drive)?;
    let n_i = cfg.source_occupation(idler.freq_hz, drive)?;
    Ok(n_s + cfg.a_i / cfg.a_s * n_i)
}

/// Drive-dependent part of the system noise the affine model omits: source
/// noise entering through every spur, referred to the signal input.
pub fn delta_n<T: Scalar>(cfg: &SerialBiasConfig<T>, drive: ControlParameter<T>) -> Result<T> {
    let mut sum = T::zero();
    for mode in cfg.spurs() {
        sum += cfg.spur_weight(mode) * cfg.source_occupation(mode.freq_hz, drive)?;
    }
    Ok(sum)
}

/// [`delta_n`] in the zero-drive limit, where every mode sees vacuum.
pub fn delta_n_vacuum<T: Scalar>(cfg: &SerialBiasConfig<T>) -> T {
    let half = cast::<T>(0.5);
    cfg.spurs()
        .fold(T::zero(), |acc, m| acc + half * cfg.spur_weight(m))
}

/// Drive-independent part of the system noise: path-loss vacuum deficit,
/// readout noise referred through the device, back-port vacuum scattered
/// off every mode, forward-path dissipation, and internal loss noise.
pub fn n_zero<T: Scalar>(cfg: &SerialBiasConfig<T>) -> Result<T> {
    let f_s = Frequency::new(cfg.f_s_hz)?;
    let half = cast::<T>(0.5);
    let two = cast::<T>(2.0);
    let path_deficit = (two - cfg.a_s - cfg.a_i) / (two * cfg.a_s);
    let readout = boltzmann::<T>() * cfg.tsys_k / (f_s.photon_energy() * cfg.gain_linear * cfg.a_s);
    let back_sum = cfg
        .modes
        .iter()
        .fold(T::zero(), |acc, m| acc + m.x2_back);
    let fwd_loss = cfg
        .spurs()
        .fold(T::zero(), |acc, m| acc + (T::one() - m.a_n) * half * m.x2_fwd);
    let scattered = (half * back_sum + fwd_loss) / (cfg.gain_linear * cfg.a_s);
    Ok(path_deficit + readout + scattered + cfg.n_exc_loss / cfg.a_s)
}

/// Seeded additive measurement noise for [`synth_measured`]; the standard
/// deviation is `sigma_rel` times each model value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec<T> {
    pub sigma_rel: T,
    pub seed: u64,
}

/// One synthetic calibration point in occupation units at the readout.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthPoint<T> {
    pub drive: ControlParameter<T>,
    pub n_cal: T,
    pub delta_n: T,
    pub n_meas: T,
}

/// Synthetic dataset a serial calibration would record over the drive grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthDataset<T> {
    pub points: Vec<SynthPoint<T>>,
    pub dressed_gain: T,
    pub noise: Option<NoiseSpec<T>>,
}

/// Evaluates the full multimode model over the drive grid. With `noise`
/// set, adds seeded Gaussian noise to each measured value; the result is
/// bit-reproducible for a given seed.
pub fn synth_measured<T: Scalar>(
    cfg: &SerialBiasConfig<T>,
    noise: Option<NoiseSpec<T>>,
) -> Result<SynthDataset<T>> {
    cfg.validate()?;
    let n0 = n_zero(cfg)?;
    let gain = cfg.dressed_gain();
    let mut rng = noise.map(|spec| ChaCha8Rng::seed_from_u64(spec.seed));
    let mut points = Vec::with_capacity(cfg.epsilon_grid.len());
    for &drive in &cfg.epsilon_grid {
        let nc = n_cal(cfg, drive)?;
        let dn = delta_n(cfg, drive)?;
        let mut n_meas = gain * (nc + n0 + dn);
        if let (Some(spec), Some(rng)) = (noise, rng.as_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            n_meas += spec.sigma_rel * n_meas * cast::<T>(z);
        }
        points.push(SynthPoint {
            drive,
            n_cal: nc,
            delta_n: dn,
            n_meas,
        });
    }
    Ok(SynthDataset {
        points,
        dressed_gain: gain,
        noise,
    })
}

/// Gain and noise offset an affine calibration reports.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BiasEstimate<T> {
    pub dressed_gain: T,
    pub n_sys: T,
}

/// Brute-force oracle: ordinary least squares of measured occupation on
/// modeled source occupation, exactly what a calibration fit would run.
pub fn oracle_ols<T: Scalar>(dataset: &SynthDataset<T>) -> Result<(BiasEstimate<T>, T, T)> {
    let xs: Vec<T> = dataset.points.iter().map(|p| p.n_cal).collect();
    let ys: Vec<T> = dataset.points.iter().map(|p| p.n_meas).collect();
    let fit = affine_least_squares(&xs, &ys)?;
    if fit.slope == T::zero() {
        return Err(Error::Underdetermined(
            "oracle fit produced zero slope".into(),
        ));
    }
    let estimate = BiasEstimate {
        dressed_gain: fit.slope,
        n_sys: fit.intercept / fit.slope,
    };
    Ok((estimate, fit.slope, fit.intercept))
}

/// High-drive closed form of the fit distortion.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AsymptoticPrediction<T> {
    /// Growth rate of the modeled source term, `1 + A_s·ω_s/(A_i·ω_i)`.
    pub alpha: T,
    /// Growth rate of the emitted flux itself, `1 + A_i·ω_s/(A_s·ω_i)`;
    /// coincides with `alpha` for symmetric paths.
    pub alpha_flux: T,
    /// Growth rate of the omitted spur term.
    pub gamma: T,
    /// Limit of the slope distortion on an ever-hotter grid, `gamma/alpha`.
    pub beta_asym: T,
    /// Predicted error on the fitted zero-drive noise; negative means the
    /// fit underestimates it.
    pub predicted_noise_error: T,
}

/// Evaluates the high-drive limit of the fit distortion, where every
/// occupation grows linearly in the drive strength.
pub fn asymptotic_prediction<T: Scalar>(
    cfg: &SerialBiasConfig<T>,
) -> Result<AsymptoticPrediction<T>> {
    cfg.validate()?;
    let idler = cfg
        .idler()
        .expect("validated above");
    let ratio = cfg.f_s_hz / idler.freq_hz;
    let alpha = T::one() + cfg.a_s / cfg.a_i * ratio;
    let alpha_flux = T::one() + cfg.a_i / cfg.a_s * ratio;
    let gamma = cfg.spurs().fold(T::zero(), |acc, m| {
        acc + cfg.spur_weight(m) * cfg.f_s_hz / m.freq_hz
    });
    let beta_asym = gamma / alpha;
    let n0 = n_zero(cfg)?;
    let predicted_noise_error =
        -(delta_n_vacuum(cfg) + beta_asym / (T::one() + beta_asym) * n0);
    Ok(AsymptoticPrediction {
        alpha,
        alpha_flux,
        gamma,
        beta_asym,
        predicted_noise_error,
    })
}

/// One row of the per-drive model table in a [`SerialBiasReport`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BiasPoint<T> {
    pub epsilon: T,
    /// Physical source temperature for thermal drives, K.
    pub source_temperature_k: Option<T>,
    pub n_cal: T,
    pub delta_n: T,
    pub n_meas: T,
    /// The fitted affine model evaluated at this point's `n_cal`.
    pub affine_fit: T,
    pub residual: T,
}

/// Everything the distortion analysis produces: the slope bias, both
/// estimator routes, the error on the fitted noise, the high-drive
/// prediction, and the per-drive model table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SerialBiasReport<T> {
    /// Relative slope distortion, `Cov(δN, N_cal)/Var(N_cal)` over the grid
    /// (population convention, matching the least-squares identity).
    pub beta: T,
    pub dressed_gain_true: T,
    pub n_zero: T,
    pub delta_n_vacuum: T,
    /// Closed-form estimators derived from the model moments.
    pub analytic: BiasEstimate<T>,
    /// Independent brute-force least-squares fit of the dataset.
    pub oracle: BiasEstimate<T>,
    /// Fitted minus true zero-drive noise; negative means underestimation.
    pub fitted_noise_error: T,
    pub asymptotic: AsymptoticPrediction<T>,
    pub noise: Option<NoiseSpec<T>>,
    pub points: Vec<BiasPoint<T>>,
}

fn population_moments<T: Scalar>(dataset: &SynthDataset<T>) -> (T, T, T, T) {
    let n = cast::<T>(dataset.points.len() as f64);
    let mut mean_cal = T::zero();
    let mut mean_dn = T::zero();
    for p in &dataset.points {
        mean_cal += p.n_cal;
        mean_dn += p.delta_n;
    }
    mean_cal /= n;
    mean_dn /= n;
    let mut var_cal = T::zero();
    let mut cov = T::zero();
    for p in &dataset.points {
        let dc = p.n_cal - mean_cal;
        var_cal += dc * dc;
        cov += (p.delta_n - mean_dn) * dc;
    }
    (mean_cal, mean_dn, var_cal / n, cov / n)
}

/// Analyzes a synthetic dataset: analytic estimators from the noiseless
/// model moments, oracle estimators from a least-squares fit of the data
/// actually in `dataset` (which may carry measurement noise).
pub fn analyze_dataset<T: Scalar>(
    cfg: &SerialBiasConfig<T>,
    dataset: &SynthDataset<T>,
) -> Result<SerialBiasReport<T>> {
    cfg.validate()?;
    // The analytic route works on the noiseless model values, so recompute
    // the moments from the model rather than trusting the dataset.
    let model = synth_measured(cfg, None)?;
    let (mean_cal, mean_dn, var_cal, cov) = population_moments(&model);
    if !(var_cal.is_finite() && var_cal > T::zero()) {
        return Err(Error::Underdetermined(
            "drive grid is degenerate: the modeled source occupation does not vary".into(),
        ));
    }
    let beta = cov / var_cal;
    let n0 = n_zero(cfg)?;
    let dn_vac = delta_n_vacuum(cfg);
    let gain_true = cfg.dressed_gain();
    let analytic = BiasEstimate {
        dressed_gain: gain_true * (T::one() + beta),
        n_sys: (n0 + mean_dn - beta * mean_cal) / (T::one() + beta),
    };
    let (oracle, slope, intercept) = oracle_ols(dataset)?;
    let fitted_noise_error = analytic.n_sys - (n0 + dn_vac);
    let asymptotic = asymptotic_prediction(cfg)?;
    let f_s = Frequency::new(cfg.f_s_hz)?;
    let points = dataset
        .points
        .iter()
        .map(|p| {
            let affine_fit = slope * p.n_cal + intercept;
            BiasPoint {
                epsilon: p.drive.epsilon,
                source_temperature_k: p.drive.temperature_k(f_s).ok(),
                n_cal: p.n_cal,
                delta_n: p.delta_n,
                n_meas: p.n_meas,
                affine_fit,
                residual: p.n_meas - affine_fit,
            }
        })
        .collect();
    Ok(SerialBiasReport {
        beta,
        dressed_gain_true: gain_true,
        n_zero: n0,
        delta_n_vacuum: dn_vac,
        analytic,
        oracle,
        fitted_noise_error,
        asymptotic,
        noise: dataset.noise,
        points,
    })
}

/// Runs the full distortion analysis on the noiseless model dataset.
pub fn analytic_bias<T: Scalar>(cfg: &SerialBiasConfig<T>) -> Result<SerialBiasReport<T>> {
    let dataset = synth_measured(cfg, None)?;
    analyze_dataset(cfg, &dataset)
}

/// Scattering weight of mixing product `n` under the conservative demo
/// scaling: `G^(1/(n+1))` above the signal, `(G − 1)^(1/|n|)` below.
pub fn demo_forward_weight<T: Scalar>(gain_linear: T, n: i32) -> Result<T> {
    if !(gain_linear.is_finite() && gain_linear > T::one()) {
        return Err(Error::Domain(format!(
            "demo weight rule needs gain > 1, got {gain_linear}"
        )));
    }
    let (base, root) = if n >= 0 {
        (gain_linear, n + 1)
    } else {
        (gain_linear - T::one(), -n)
    };
    Ok(if root == 1 {
        base
    } else {
        base.powf(cast::<T>(f64::from(root)).recip())
    })
}

/// Per-mode path transmissions for [`demo_config`]; anything not listed
/// defaults to lossless.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathLossTable<T> {
    pub a_s: Option<T>,
    pub a_i: Option<T>,
    pub a_modes: Vec<(i32, T)>,
}

impl<T> Default for PathLossTable<T> {
    fn default() -> Self {
        Self {
            a_s: None,
            a_i: None,
            a_modes: Vec::new(),
        }
    }
}

impl<T: Scalar> PathLossTable<T> {
    fn mode(&self, n: i32) -> T {
        self.a_modes
            .iter()
            .find(|(i, _)| *i == n)
            .map(|(_, a)| *a)
            .unwrap_or_else(T::one)
    }
}

/// Builds the benchmark configuration used throughout the tests and the
/// command-line demo: a 4 GHz signal pumped at 8 GHz, first-order
/// intermodulation products of signal and pump, forward weights from
/// [`demo_forward_weight`], back-port weights one hundredth of forward, a
/// 70.9 dB readout at 4.65 K, and ten thermal drives spanning 20 mK to 2 K.
pub fn demo_config<T: Scalar>(
    gain_db: T,
    losses: Option<&PathLossTable<T>>,
) -> Result<SerialBiasConfig<T>> {
    let default_losses = PathLossTable::default();
    let losses = losses.unwrap_or(&default_losses);
    let f_s_hz = cast::<T>(4e9);
    let f_p_hz = cast::<T>(8e9);
    let gain_linear = crate::physics::db_to_linear(gain_db);
    let back_scale = cast::<T>(0.01);
    let mut modes = Vec::new();
    for n in [0, -1, 1, -2, 2, 3, -4, 4, -5] {
        let fwd = demo_forward_weight(gain_linear, n)?;
        modes.push(ModeSpec::at_index(
            n,
            f_s_hz,
            f_p_hz,
            losses.mode(n),
            fwd,
            fwd * back_scale,
        )?);
    }
    let f_s = Frequency::new(f_s_hz)?;
    let n_temps = 10;
    let (t_lo, t_hi) = (0.02, 2.0);
    let epsilon_grid = (0..n_temps)
        .map(|i| {
            let t = t_lo + (t_hi - t_lo) * i as f64 / f64::from(n_temps - 1);
            ControlParameter::from_temperature(cast::<T>(t), f_s)
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = SerialBiasConfig {
        f_s_hz,
        f_p_hz,
        gain_linear,
        a_s: losses.a_s.unwrap_or_else(T::one),
        a_i: losses.a_i.unwrap_or_else(T::one),
        modes,
        gsys_linear: crate::physics::db_to_linear(cast::<T>(70.9)),
        tsys_k: cast::<T>(4.65),
        epsilon_grid,
        junction_temp_k: T::zero(),
        n_exc_loss: T::zero(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Renders the per-drive table of a report as CSV, one row per grid point.
pub fn report_csv<T: Scalar>(report: &SerialBiasReport<T>) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "eps",
        "T_K",
        "n_cal",
        "delta_n",
        "n_meas",
        "affine_fit",
        "residual",
    ])
    .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    for p in &report.points {
        let t_field = p
            .source_temperature_k
            .map(|t| format!("{:e}", as_f64(t)))
            .unwrap_or_default();
        wtr.write_record([
            format!("{:e}", as_f64(p.epsilon)),
            t_field,
            format!("{:e}", as_f64(p.n_cal)),
            format!("{:e}", as_f64(p.delta_n)),
            format!("{:e}", as_f64(p.n_meas)),
            format!("{:e}", as_f64(p.affine_fit)),
            format!("{:e}", as_f64(p.residual)),
        ])
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Domain(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Domain(format!("csv not utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn demo() -> SerialBiasConfig<f64> {
        demo_config(20.0, None).unwrap()
    }

    fn thermal(eps: f64) -> ControlParameter<f64> {
        ControlParameter::new(eps, SourceKind::Thermal).unwrap()
    }

    #[test]
    fn demo_weights_follow_the_scaling_rule() {
        let cfg = demo();
        assert_relative_eq!(cfg.gain_linear, 100.0, max_relative = 1e-12);
        let by_n = |n: i32| cfg.modes.iter().find(|m| m.n == n).unwrap();
        assert_eq!(by_n(0).x2_fwd, 100.0);
        assert_eq!(by_n(-1).x2_fwd, 99.0);
        assert_relative_eq!(by_n(1).x2_fwd, 10.0, max_relative = 1e-12);
        assert_relative_eq!(by_n(2).x2_fwd, 4.641588833612779, max_relative = 1e-12);
        assert_relative_eq!(by_n(-2).x2_fwd, 99.0f64.sqrt(), max_relative = 1e-12);
        for m in &cfg.modes {
            assert_relative_eq!(m.x2_back, m.x2_fwd / 100.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn demo_mode_frequencies_are_the_mixing_products() {
        let cfg = demo();
        let freq = |n: i32| cfg.modes.iter().find(|m| m.n == n).unwrap().freq_hz;
        assert_eq!(freq(0), 4e9);
        assert_eq!(freq(-1), 4e9);
        assert_eq!(freq(1), 12e9);
        assert_eq!(freq(-2), 12e9);
        assert_eq!(freq(2), 20e9);
        assert_eq!(freq(3), 28e9);
        assert_eq!(freq(-4), 28e9);
        assert_eq!(freq(4), 36e9);
        assert_eq!(freq(-5), 36e9);
    }

    #[test]
    fn demo_drive_grid_spans_the_temperature_sweep() {
        let cfg = demo();
        assert_eq!(cfg.epsilon_grid.len(), 10);
        assert_relative_eq!(
            cfg.epsilon_grid[0].epsilon,
            0.1041830956804728,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cfg.epsilon_grid[9].epsilon,
            10.41830956804729,
            max_relative = 1e-12
        );
    }

    #[test]
    fn n_cal_vacuum_limit_is_one_photon_for_symmetric_paths() {
        let cfg = demo();
        let n = n_cal(&cfg, thermal(0.0)).unwrap();
        assert_eq!(n, 1.0);
    }

    #[test]
    fn n_cal_grows_linearly_at_high_drive() {
        let cfg = demo();
        let eps = 1000.0;
        let n = n_cal(&cfg, thermal(eps)).unwrap();
        // Signal and idler sit at the same frequency here, so the modeled
        // source term grows as 2ε.
        assert_relative_eq!(n / eps, 2.0, max_relative = 1e-2);

        let mut lossy = cfg.clone();
        lossy.a_s = 0.9;
        lossy.a_i = 0.5;
        let coeff = 1.0 + (0.5 / 0.9) * (lossy.f_s_hz / 4e9);
        let n = n_cal(&lossy, thermal(eps)).unwrap();
        assert_relative_eq!(n / eps, coeff, max_relative = 1e-2);
        let asym = asymptotic_prediction(&lossy).unwrap();
        assert_relative_eq!(asym.alpha_flux, coeff, max_relative = 1e-12);
        assert_relative_eq!(asym.alpha, 1.0 + 0.9 / 0.5, max_relative = 1e-12);
    }

    #[test]
    fn delta_n_reduces_to_single_terms() {
        let mut cfg = demo();
        cfg.modes.retain(|m| m.n == 0 || m.n == -1);
        assert_eq!(delta_n(&cfg, thermal(5.0)).unwrap(), 0.0);
        assert_eq!(delta_n_vacuum(&cfg), 0.0);

        // One spur with unit weight reproduces the source law at its
        // frequency.
        let w = cfg.a_s * cfg.gain_linear;
        cfg.modes
            .push(ModeSpec::new(2, 20e9, 1.0, w, 0.0).unwrap());
        let drive = thermal(5.0);
        let expect = cfg.source_occupation(20e9, drive).unwrap();
        assert_relative_eq!(delta_n(&cfg, drive).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn n_zero_isolates_each_contribution() {
        let mut cfg = demo();
        cfg.tsys_k = 0.0;
        for m in &mut cfg.modes {
            m.x2_back = 0.0;
        }
        assert_eq!(n_zero(&cfg).unwrap(), 0.0);

        // Readout-only: k_B·T_sys referred through the device.
        let mut cfg = demo();
        for m in &mut cfg.modes {
            m.x2_back = 0.0;
        }
        let f_s = Frequency::new(cfg.f_s_hz).unwrap();
        let expect = crate::constants::BOLTZMANN * cfg.tsys_k
            / (f_s.photon_energy() * cfg.gain_linear * cfg.a_s);
        assert_relative_eq!(n_zero(&cfg).unwrap(), expect, max_relative = 1e-12);

        // Internal loss enters divided by the signal path.
        let mut cfg = demo();
        cfg.a_s = 0.8;
        cfg.n_exc_loss = 0.12;
        let base = {
            let mut c = cfg.clone();
            c.n_exc_loss = 0.0;
            n_zero(&c).unwrap()
        };
        assert_relative_eq!(
            n_zero(&cfg).unwrap(),
            base + 0.12 / 0.8,
            max_relative = 1e-12
        );
    }

    #[test]
    fn benchmark_model_values_are_frozen() {
        let cfg = demo();
        assert_relative_eq!(n_zero(&cfg).unwrap(), 0.2539720380513005, max_relative = 1e-12);
        assert_relative_eq!(
            delta_n_vacuum(&cfg),
            0.1796340594201047,
            max_relative = 1e-12
        );
        let report = analytic_bias(&cfg).unwrap();
        assert_relative_eq!(report.beta, 0.04042643989475093, max_relative = 1e-12);
        assert_relative_eq!(
            report.fitted_noise_error,
            -0.10056931277097442,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            report.asymptotic.gamma,
            0.09038286689884151,
            max_relative = 1e-12
        );
        assert_relative_eq!(report.asymptotic.alpha, 2.0, max_relative = 1e-12);
        assert_relative_eq!(
            report.asymptotic.predicted_noise_error,
            -0.1906151678451237,
            max_relative = 1e-12
        );
    }

    #[test]
    fn analytic_and_oracle_estimates_coincide() {
        let report = analytic_bias(&demo()).unwrap();
        assert_relative_eq!(
            report.analytic.dressed_gain,
            report.oracle.dressed_gain,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            report.analytic.n_sys,
            report.oracle.n_sys,
            max_relative = 1e-12
        );
        // The fitted slope exceeds the true dressed gain: β > 0.
        assert!(report.beta > 0.0);
        assert!(report.analytic.dressed_gain > report.dressed_gain_true);
    }

    #[test]
    fn noise_error_matches_its_expanded_form() {
        let cfg = demo();
        let report = analytic_bias(&cfg).unwrap();
        let model = synth_measured(&cfg, None).unwrap();
        let n = model.points.len() as f64;
        let mean_cal: f64 = model.points.iter().map(|p| p.n_cal).sum::<f64>() / n;
        let mean_dn: f64 = model.points.iter().map(|p| p.delta_n).sum::<f64>() / n;
        let nsys0 = report.n_zero + report.delta_n_vacuum;
        let expanded = ((mean_dn - report.delta_n_vacuum)
            - report.beta * (mean_cal + nsys0))
            / (1.0 + report.beta);
        assert_relative_eq!(report.fitted_noise_error, expanded, max_relative = 1e-12);
    }

    #[test]
    fn residuals_show_the_convex_signature() {
        let report = analytic_bias(&demo()).unwrap();
        let signs: Vec<f64> = report.points.iter().map(|p| p.residual.signum()).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(changes >= 2, "expected >= 2 sign changes, got {changes}");
        // Convex model: positive residuals at both ends of the grid.
        assert!(report.points.first().unwrap().residual > 0.0);
        assert!(report.points.last().unwrap().residual > 0.0);
    }

    #[test]
    fn proportional_spur_noise_reproduces_its_coefficient() {
        let mut cfg = demo();
        cfg.modes.retain(|m| m.n == 0 || m.n == -1);
        let c = 0.037;
        let w = c * cfg.a_s * cfg.gain_linear;
        // Spurs at the signal and idler frequencies with weights c and
        // c·A_i/A_s make the omitted term exactly proportional to the
        // modeled one.
        cfg.modes
            .push(ModeSpec::new(3, cfg.f_s_hz, 1.0, w, 0.0).unwrap());
        cfg.modes
            .push(ModeSpec::new(4, 4e9, 1.0, w * cfg.a_i / cfg.a_s, 0.0).unwrap());
        let report = analytic_bias(&cfg).unwrap();
        assert_relative_eq!(report.beta, c, max_relative = 1e-12);

        // No spurs at all: no slope bias.
        cfg.modes.retain(|m| m.n == 0 || m.n == -1);
        let report = analytic_bias(&cfg).unwrap();
        assert_relative_eq!(report.beta, 0.0, epsilon = 1e-15);
        assert_relative_eq!(
            report.analytic.dressed_gain,
            report.dressed_gain_true,
            max_relative = 1e-12
        );
        assert_eq!(report.asymptotic.gamma, 0.0);
    }

    #[test]
    fn beta_converges_to_its_high_drive_limit() {
        let cfg = demo();
        let asym = asymptotic_prediction(&cfg).unwrap();
        let beta_at_scale = |scale: f64| {
            let mut scaled = cfg.clone();
            for d in &mut scaled.epsilon_grid {
                d.epsilon *= scale;
            }
            analytic_bias(&scaled).unwrap().beta
        };
        let betas = [beta_at_scale(1.0), beta_at_scale(10.0), beta_at_scale(100.0)];
        assert_relative_eq!(betas[1], 0.04495451617743654, max_relative = 1e-9);
        for pair in betas.windows(2) {
            assert!(pair[0] < pair[1], "convergence must be monotone: {betas:?}");
        }
        for &b in &betas {
            assert!(b < asym.beta_asym);
        }
        assert!((betas[2] - asym.beta_asym).abs() / asym.beta_asym < 1e-3);
    }

    #[test]
    fn high_drive_sampling_approaches_the_limit() {
        let mut cfg = demo();
        cfg.epsilon_grid = (0..10)
            .map(|i| thermal(50.0 + 450.0 * f64::from(i) / 9.0))
            .collect();
        let report = analytic_bias(&cfg).unwrap();
        assert_relative_eq!(report.beta, 0.045189417171196046, max_relative = 1e-9);
        assert_relative_eq!(
            report.fitted_noise_error,
            -0.18879059063870546,
            max_relative = 1e-9
        );
        // On this grid the closed-form limit lands within one percent of
        // the exact slope distortion and noise error.
        let asym = &report.asymptotic;
        assert!((report.beta - asym.beta_asym).abs() / asym.beta_asym < 1e-3);
        assert!(
            (report.fitted_noise_error - asym.predicted_noise_error).abs()
                / asym.predicted_noise_error.abs()
                < 1e-2
        );
        assert!(asym.predicted_noise_error < 0.0);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let cfg = demo();
        let spec = NoiseSpec {
            sigma_rel: 1e-3,
            seed: 41,
        };
        let a = synth_measured(&cfg, Some(spec)).unwrap();
        let b = synth_measured(&cfg, Some(spec)).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.n_meas.to_bits(), pb.n_meas.to_bits());
        }
        let c = synth_measured(&cfg, Some(NoiseSpec { seed: 42, ..spec })).unwrap();
        assert!(a
            .points
            .iter()
            .zip(&c.points)
            .any(|(pa, pc)| pa.n_meas != pc.n_meas));

        // With noise, the oracle drifts from the analytic route by an
        // amount on the order of the noise itself.
        let report = analyze_dataset(&cfg, &a).unwrap();
        let rel = (report.oracle.dressed_gain - report.analytic.dressed_gain).abs()
            / report.analytic.dressed_gain;
        assert!(rel > 0.0 && rel < 1e-2, "rel = {rel}");
        assert_eq!(report.noise, Some(spec));
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let mut cfg = demo();
        cfg.epsilon_grid = vec![thermal(1.0); 4];
        assert!(matches!(
            analytic_bias(&cfg).err(),
            Some(Error::Domain(_))
        ));
        // Distinct drives that produce indistinguishable occupations fail
        // at analysis time instead.
        cfg.epsilon_grid = vec![thermal(1e-18), thermal(2e-18)];
        assert!(matches!(
            analytic_bias(&cfg).err(),
            Some(Error::Underdetermined(_))
        ));
    }

    #[test]
    fn report_serializes_with_csv_table() {
        let report = analytic_bias(&demo()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: SerialBiasReport<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.points.len(), 10);
        let csv = report_csv(&report).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "eps,T_K,n_cal,delta_n,n_meas,affine_fit,residual"
        );
        assert_eq!(lines.count(), 10);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_config() -> impl Strategy<Value = SerialBiasConfig<f64>> {
            let spur = (1..40u32, 1.0..50.0f64, 0.05..1.0f64, 0.0..200.0f64, 0.0..2.0f64);
            (
                3.0..40.0f64,                       // gain, dB
                0.05..1.0f64,                       // a_s
                0.05..1.0f64,                       // a_i
                0.0..20.0f64,                       // tsys_k
                proptest::collection::vec(spur, 1..6),
                0.02..0.5f64,                       // coldest temperature
                2.0..100.0f64,                      // grid span factor
                3..12usize,                         // grid points
            )
                .prop_map(|(gdb, a_s, a_i, tsys, spurs, t0, span, npts)| {
                    let gain = crate::physics::db_to_linear(gdb);
                    let f_s = Frequency::new(4e9).unwrap();
                    let mut modes = vec![
                        ModeSpec::new(0, 4e9, 1.0, gain, gain / 100.0).unwrap(),
                        ModeSpec::new(-1, 4e9, 1.0, gain - 1.0, (gain - 1.0) / 100.0)
                            .unwrap(),
                    ];
                    for (i, (n, f_ghz, a_n, fwd, back)) in spurs.into_iter().enumerate() {
                        modes.push(
                            ModeSpec::new(n as i32 + i as i32, f_ghz * 1e9, a_n, fwd, back)
                                .unwrap(),
                        );
                    }
                    let epsilon_grid = (0..npts)
                        .map(|i| {
                            let t = t0 * (1.0 + (span - 1.0) * i as f64 / (npts - 1) as f64);
                            ControlParameter::from_temperature(t, f_s).unwrap()
                        })
                        .collect();
                    SerialBiasConfig {
                        f_s_hz: 4e9,
                        f_p_hz: 8e9,
                        gain_linear: gain,
                        a_s,
                        a_i,
                        modes,
                        gsys_linear: 1e7,
                        tsys_k: tsys,
                        epsilon_grid,
                        junction_temp_k: 0.0,
                        n_exc_loss: 0.0,
                    }
                })
        }

        proptest! {
            #[test]
            fn oracle_matches_analytic_estimators(cfg in arb_config()) {
                let report = analytic_bias(&cfg).unwrap();
                let rel_gain = (report.oracle.dressed_gain - report.analytic.dressed_gain)
                    .abs()
                    / report.analytic.dressed_gain.abs();
                let rel_nsys = (report.oracle.n_sys - report.analytic.n_sys).abs()
                    / report.analytic.n_sys.abs();
                prop_assert!(rel_gain < 1e-9, "gain mismatch {rel_gain}");
                prop_assert!(rel_nsys < 1e-9, "noise mismatch {rel_nsys}");
            }

            #[test]
            fn thermal_grids_never_bias_the_slope_downward(cfg in arb_config()) {
                // Every spur occupation is nondecreasing in temperature and
                // the modeled source term is increasing, so the covariance
                // cannot be negative.
                let report = analytic_bias(&cfg).unwrap();
                prop_assert!(report.beta >= -1e-15, "beta = {}", report.beta);
            }
        }
    }
}
