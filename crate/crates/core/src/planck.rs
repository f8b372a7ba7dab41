//! Readout-chain calibration against a thermal noise standard.
//!
//! Sweeping the standard's temperature and recording the detected PSD
//! gives, at every frequency, points on an affine law: the PSD is linear
//! in the source's photon flux with slope `G_sys` and intercept
//! `G_sys·k_B·T_sys`. Solving that regression exactly (no iterative
//! fitting) recovers gain and noise temperature with textbook
//! least-squares uncertainties. The module also covers the two-point
//! Y-factor shortcut, unfolding of fits taken through a substitution
//! attenuator, and the final added-noise extraction for a device under
//! test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::boltzmann;
use crate::error::{Error, Result};
use crate::physics::{planck_occupation, quantum_limit, Frequency, SourceKind};
use crate::scalar::{as_f64, cast, Scalar};
use crate::sparams::NoiseSourceModel;
use crate::thermal::ReadoutChainParams;

/// The noise standard driving a temperature sweep.
#[derive(Clone, Debug)]
pub enum SweepSource<T> {
    /// Perfectly matched blackbody: emitted occupation is the Planck law.
    Ideal,
    /// Physical source with measured S-parameters shaping its emission.
    Measured(NoiseSourceModel<T>),
}

impl<T: Scalar> SweepSource<T> {
    /// Photon flux the source launches into the chain at temperature `t_k`.
    pub fn emitted_occupation(&self, f: Frequency<T>, t_k: T) -> Result<T> {
        let thermal = planck_occupation(f, t_k)?;
        match self {
            SweepSource::Ideal => Ok(thermal),
            SweepSource::Measured(model) => {
                if model.kind != SourceKind::Thermal {
                    return Err(Error::Domain(
                        "temperature sweeps need a thermal source model".into(),
                    ));
                }
                model.output_occupation(thermal, f.hz())
            }
        }
    }
}

/// One temperature point of a sweep: the PSD recorded at every frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord<T> {
    pub t_vts_k: T,
    pub psd_w_per_hz: Vec<T>,
}

/// A full temperature sweep over a frequency grid.
#[derive(Clone, Debug)]
pub struct PlanckSweep<T> {
    pub freqs_hz: Vec<T>,
    pub records: Vec<SweepRecord<T>>,
    pub source: SweepSource<T>,
}

impl<T: Scalar> PlanckSweep<T> {
    pub fn new(
        freqs_hz: Vec<T>,
        records: Vec<SweepRecord<T>>,
        source: SweepSource<T>,
    ) -> Result<Self> {
        let sweep = PlanckSweep { freqs_hz, records, source };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        crate::grid::check_ascending(&self.freqs_hz)?;
        if self.distinct_temperature_count() < 2 {
            return Err(Error::Underdetermined(
                "a sweep needs at least two distinct temperatures".into(),
            ));
        }
        for rec in &self.records {
            if !(rec.t_vts_k.is_finite() && rec.t_vts_k >= T::zero()) {
                return Err(Error::Domain(format!(
                    "sweep temperature must be finite and nonnegative, got {}",
                    rec.t_vts_k
                )));
            }
            if rec.psd_w_per_hz.len() != self.freqs_hz.len() {
                return Err(Error::Grid(format!(
                    "record at {} K has {} PSD points for a {}-point grid",
                    rec.t_vts_k,
                    rec.psd_w_per_hz.len(),
                    self.freqs_hz.len()
                )));
            }
            if rec.psd_w_per_hz.iter().any(|p| !(p.is_finite() && *p > T::zero())) {
                return Err(Error::Domain(format!(
                    "PSDs must be positive, offending record at {} K",
                    rec.t_vts_k
                )));
            }
        }
        Ok(())
    }

    fn distinct_temperature_count(&self) -> usize {
        let mut temps: Vec<f64> = self.records.iter().map(|r| as_f64(r.t_vts_k)).collect();
        temps.sort_by(f64::total_cmp);
        temps.dedup();
        temps.len()
    }
}

/// Exact ordinary least squares of `y` on `x` with standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineFit<T> {
    pub slope: T,
    pub intercept: T,
    pub var_slope: T,
    pub var_intercept: T,
    pub cov_slope_intercept: T,
    pub residual_rms: T,
}

/// Fits `y ≈ slope·x + intercept` by least squares.
///
/// Variances use the unbiased residual estimate with `n − 2` degrees of
/// freedom; a two-point fit is exact and reports zero variance.
pub fn affine_least_squares<T: Scalar>(xs: &[T], ys: &[T]) -> Result<AffineFit<T>> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::Underdetermined(format!(
            "affine fit needs at least two paired points, got {n} xs and {} ys",
            ys.len()
        )));
    }
    let nt = cast::<T>(n as f64);
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / nt;
    let x_bar = mean(xs);
    let y_bar = mean(ys);
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - x_bar) * (x - x_bar);
        sxy += (x - x_bar) * (y - y_bar);
    }
    if !(sxx > T::zero()) || !sxx.is_finite() {
        return Err(Error::Underdetermined(
            "regressor does not vary across the sweep".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let mut ssr = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - slope * x - intercept;
        ssr += r * r;
    }
    let residual_rms = (ssr / nt).sqrt();
    let s2 = if n > 2 {
        ssr / cast::<T>((n - 2) as f64)
    } else {
        T::zero()
    };
    Ok(AffineFit {
        slope,
        intercept,
        var_slope: s2 / sxx,
        var_intercept: s2 * (T::one() / nt + x_bar * x_bar / sxx),
        cov_slope_intercept: -s2 * x_bar / sxx,
        residual_rms,
    })
}

/// Calibration outcome at one frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanckFitPoint<T> {
    pub freq_hz: T,
    pub gsys_linear: T,
    pub tsys_k: T,
    pub sigma_gsys: T,
    pub sigma_tsys: T,
    pub residual_rms: T,
    /// Fitted gain came out nonpositive: the sweep cannot describe a
    /// physical chain and downstream use should stop.
    pub nonpositive_gain: bool,
    /// Fitted noise temperature is below zero; reported unclamped since
    /// clamping would bias uncertainty statements.
    pub negative_tsys: bool,
}

/// Per-frequency calibration results of one sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanckFitResult<T> {
    pub points: Vec<PlanckFitPoint<T>>,
}

impl<T: Scalar> PlanckFitResult<T> {
    pub fn is_physical(&self) -> bool {
        self.points
            .iter()
            .all(|p| !p.nonpositive_gain && !p.negative_tsys)
    }

    /// Converts into chain parameters carrying the fit uncertainties.
    /// Fails if any point is flagged unphysical.
    pub fn to_chain_params(&self) -> Result<ReadoutChainParams<T>> {
        ReadoutChainParams::new(
            self.points.iter().map(|p| p.freq_hz).collect(),
            self.points.iter().map(|p| p.gsys_linear).collect(),
            self.points.iter().map(|p| p.tsys_k).collect(),
            Some(self.points.iter().map(|p| p.sigma_gsys).collect()),
            Some(self.points.iter().map(|p| p.sigma_tsys).collect()),
        )
    }
}

fn unfold_gain_noise<T: Scalar>(
    freq_hz: T,
    fit: &AffineFit<T>,
) -> Result<PlanckFitPoint<T>> {
    let f = Frequency::new(freq_hz)?;
    let kb = boltzmann::<T>();
    let a = fit.slope;
    let b = fit.intercept;
    let tsys = b / (a * kb);
    // T_sys = b/(a·k_B) to first order in the fit errors, including their
    // covariance.
    let fa = -b / (a * a * kb);
    let fb = T::one() / (a * kb);
    let var_t = fa * fa * fit.var_slope
        + fb * fb * fit.var_intercept
        + (fa * fb + fa * fb) * fit.cov_slope_intercept;
    let _ = f;
    Ok(PlanckFitPoint {
        freq_hz,
        gsys_linear: a,
        tsys_k: tsys,
        sigma_gsys: fit.var_slope.max(T::zero()).sqrt(),
        sigma_tsys: var_t.max(T::zero()).sqrt(),
        residual_rms: fit.residual_rms,
        nonpositive_gain: !(a > T::zero()),
        negative_tsys: tsys < T::zero(),
    })
}

/// Calibrates the chain at every frequency of the sweep.
///
/// The regression abscissa at temperature `T` is
/// `x = ħω·N_emitted(f, T)`, so the detected PSD is `G_sys·x +
/// G_sys·k_B·T_sys`: an exact linear least-squares problem per frequency.
/// Frequencies are processed in parallel with deterministic ordering.
pub fn fit_planck<T: Scalar>(sweep: &PlanckSweep<T>) -> Result<PlanckFitResult<T>> {
    sweep.validate()?;
    let points = sweep
        .freqs_hz
        .par_iter()
        .enumerate()
        .map(|(fi, &freq)| {
            let f = Frequency::new(freq)?;
            let hw = f.photon_energy();
            let mut xs = Vec::with_capacity(sweep.records.len());
            let mut ys = Vec::with_capacity(sweep.records.len());
            for rec in &sweep.records {
                xs.push(hw * sweep.source.emitted_occupation(f, rec.t_vts_k)?);
                ys.push(rec.psd_w_per_hz[fi]);
            }
            let fit = affine_least_squares(&xs, &ys)?;
            unfold_gain_noise(freq, &fit)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlanckFitResult { points })
}

/// Two-point calibration from a hot and a cold source state.
///
/// Solves the same affine law exactly through two points; agrees with
/// [`fit_planck`] on noiseless data.
pub fn y_factor<T: Scalar>(
    hot: (T, T),
    cold: (T, T),
    f: Frequency<T>,
) -> Result<(T, T)> {
    let (t_hot, psd_hot) = hot;
    let (t_cold, psd_cold) = cold;
    if !(t_hot > t_cold) {
        return Err(Error::Underdetermined(format!(
            "hot temperature {t_hot} K must exceed cold temperature {t_cold} K"
        )));
    }
    let hw = f.photon_energy();
    let x_hot = hw * planck_occupation(f, t_hot)?;
    let x_cold = hw * planck_occupation(f, t_cold)?;
    let slope = (psd_hot - psd_cold) / (x_hot - x_cold);
    let intercept = psd_cold - slope * x_cold;
    if !(slope > T::zero()) {
        return Err(Error::Domain(format!(
            "two-point solution gives nonpositive gain {slope}"
        )));
    }
    Ok((slope, intercept / (slope * boltzmann::<T>())))
}

/// Unfolds a calibration taken through a substitution attenuator.
///
/// With the standard attached behind a path of linear transmission `A_s`,
/// the sweep fits the dressed values `G̃ = G·A_s` and a noise temperature
/// containing the attenuator's own vacuum term. Knowing `A_s` recovers the
/// bare chain: `G = G̃/A_s` and `T_sys = A_s·T̃ − (1 − A_s)·ħω/(2k_B)`.
pub fn extract_substitution<T: Scalar>(
    chain_fit: &PlanckFitResult<T>,
    a_s: T,
) -> Result<ReadoutChainParams<T>> {
    if !(a_s > T::zero() && a_s <= T::one()) {
        return Err(Error::Domain(format!(
            "substitution transmission must lie in (0, 1], got {a_s}"
        )));
    }
    let kb = boltzmann::<T>();
    let half = cast::<T>(0.5);
    let mut freqs = Vec::with_capacity(chain_fit.points.len());
    let mut gains = Vec::with_capacity(chain_fit.points.len());
    let mut temps = Vec::with_capacity(chain_fit.points.len());
    let mut sig_g = Vec::with_capacity(chain_fit.points.len());
    let mut sig_t = Vec::with_capacity(chain_fit.points.len());
    for p in &chain_fit.points {
        let f = Frequency::new(p.freq_hz)?;
        let hw = f.photon_energy();
        freqs.push(p.freq_hz);
        gains.push(p.gsys_linear / a_s);
        temps.push(a_s * p.tsys_k - (T::one() - a_s) * hw * half / kb);
        sig_g.push(p.sigma_gsys / a_s);
        sig_t.push(a_s * p.sigma_tsys);
    }
    ReadoutChainParams::new(freqs, gains, temps, Some(sig_g), Some(sig_t))
}

/// Added noise of a device at one frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddedNoisePoint<T> {
    pub freq_hz: T,
    /// Occupation referred to the chain's input plane.
    pub n_out: T,
    /// Device gain used for the referral.
    pub g_dut: T,
    pub n_add: T,
    pub sigma_n_add: T,
    /// Best added noise any phase-insensitive amplifier of this gain allows.
    pub quantum_limit: T,
    /// Inferred output occupation was negative: the chain calibration and
    /// this measurement are inconsistent. Value reported unclamped.
    pub flagged_negative: bool,
}

/// Added-noise extraction over a frequency grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddedNoiseResult<T> {
    pub points: Vec<AddedNoisePoint<T>>,
}

/// Refers a measured device-output PSD back to input and subtracts the
/// input occupation.
///
/// `n_out = (psd/G_sys − k_B·T_sys)/ħω`, then `n_add = n_out/G − n_in`.
/// `n_in` defaults to vacuum (1/2 everywhere). Uncertainties propagate
/// first-order from the chain's gain and noise-temperature sigmas,
/// treated as independent.
pub fn extract_added_noise<T: Scalar>(
    freqs_hz: &[T],
    psd_dut: &[T],
    chain: &ReadoutChainParams<T>,
    g_dut: &[T],
    n_in: Option<&[T]>,
) -> Result<AddedNoiseResult<T>> {
    let n = freqs_hz.len();
    if psd_dut.len() != n || g_dut.len() != n {
        return Err(Error::Grid(format!(
            "PSD and gain vectors must match the {n}-point frequency grid"
        )));
    }
    if let Some(v) = n_in {
        if v.len() != n {
            return Err(Error::Grid(format!(
                "input occupation vector must match the {n}-point frequency grid"
            )));
        }
    }
    let kb = boltzmann::<T>();
    let half = cast::<T>(0.5);
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let f = Frequency::new(freqs_hz[k])?;
        let hw = f.photon_energy();
        let g = g_dut[k];
        if !(g > T::zero() && g.is_finite()) {
            return Err(Error::Domain(format!(
                "device gain must be positive, got {g} at {} Hz",
                as_f64(freqs_hz[k])
            )));
        }
        let point = chain.at(freqs_hz[k])?;
        let n_out = (psd_dut[k] / point.gsys_linear - kb * point.tsys_k) / hw;
        let n_input = n_in.map_or(half, |v| v[k]);
        let n_add = n_out / g - n_input;
        let dg = point.sigma_gsys.unwrap_or(T::zero());
        let dt = point.sigma_tsys.unwrap_or(T::zero());
        let d_n_out_d_g = psd_dut[k] / (point.gsys_linear * point.gsys_linear * hw);
        let d_n_out_d_t = kb / hw;
        let var_n_out = d_n_out_d_g * d_n_out_d_g * dg * dg + d_n_out_d_t * d_n_out_d_t * dt * dt;
        points.push(AddedNoisePoint {
            freq_hz: freqs_hz[k],
            n_out,
            g_dut: g,
            n_add,
            sigma_n_add: var_n_out.sqrt() / g,
            quantum_limit: quantum_limit(g)?,
            flagged_negative: n_out < T::zero(),
        });
    }
    Ok(AddedNoiseResult { points })
}

/// Joins fit and added-noise results into one CSV table.
///
/// Column order is fixed: `freq_hz,gsys_linear,gsys_db,tsys_K,sigma_gsys,
/// sigma_tsys,n_out,n_add,sigma_n_add,quantum_limit`. Rows without an
/// added-noise counterpart leave those columns empty.
pub fn results_csv<T: Scalar>(
    fit: &PlanckFitResult<T>,
    added: Option<&AddedNoiseResult<T>>,
) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "freq_hz",
        "gsys_linear",
        "gsys_db",
        "tsys_K",
        "sigma_gsys",
        "sigma_tsys",
        "n_out",
        "n_add",
        "sigma_n_add",
        "quantum_limit",
    ])
    .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    for p in &fit.points {
        let extra = added.and_then(|a| {
            a.points
                .iter()
                .find(|q| as_f64(q.freq_hz) == as_f64(p.freq_hz))
        });
        let fmt = |v: T| format!("{v}");
        let opt = |v: Option<T>| v.map(fmt).unwrap_or_default();
        wtr.write_record([
            fmt(p.freq_hz),
            fmt(p.gsys_linear),
            fmt(crate::physics::linear_to_db(p.gsys_linear)),
            fmt(p.tsys_k),
            fmt(p.sigma_gsys),
            fmt(p.sigma_tsys),
            opt(extra.map(|q| q.n_out)),
            opt(extra.map(|q| q.n_add)),
            opt(extra.map(|q| q.sigma_n_add)),
            opt(extra.map(|q| q.quantum_limit)),
        ])
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Domain(format!("csv not utf-8: {e}")))
}

/// Parses a sweep from long-format CSV with columns
/// `freq_hz,T_vts_K,psd_W_per_Hz`.
///
/// Rows are grouped by temperature in order of first appearance; every
/// temperature block must list the same ascending frequency grid.
pub fn parse_sweep_csv(text: &str, source: SweepSource<f64>) -> Result<PlanckSweep<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad CSV header: {e}") })?
        .clone();
    let expected = ["freq_hz", "T_vts_K", "psd_W_per_Hz"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {expected:?}, found {headers:?}"),
        });
    }
    let mut temps: Vec<f64> = Vec::new();
    let mut blocks: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: format!("bad CSV row: {e}"),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 columns, found {}", rec.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<f64> {
            rec[idx].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid {name} '{}'", &rec[idx]),
            })
        };
        let f = field(0, "frequency")?;
        let t = field(1, "temperature")?;
        let psd = field(2, "PSD")?;
        match temps.iter().position(|&x| x == t) {
            Some(idx) => {
                blocks[idx].0.push(f);
                blocks[idx].1.push(psd);
            }
            None => {
                temps.push(t);
                blocks.push((vec![f], vec![psd]));
            }
        }
    }
    if temps.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no data rows".into() });
    }
    let grid = blocks[0].0.clone();
    for (t, (freqs, _)) in temps.iter().zip(&blocks) {
        if *freqs != grid {
            return Err(Error::Grid(format!(
                "temperature block at {t} K lists a different frequency grid"
            )));
        }
    }
    PlanckSweep::new(
        grid,
        temps
            .into_iter()
            .zip(blocks)
            .map(|(t, (_, psd))| SweepRecord { t_vts_k: t, psd_w_per_hz: psd })
            .collect(),
        source,
    )
}

/// Renders a sweep in the long CSV format accepted by [`parse_sweep_csv`].
pub fn write_sweep_csv<T: Scalar>(sweep: &PlanckSweep<T>) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["freq_hz", "T_vts_K", "psd_W_per_Hz"])
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    for rec in &sweep.records {
        for (f, psd) in sweep.freqs_hz.iter().zip(&rec.psd_w_per_hz) {
            wtr.write_record([
                format!("{f}"),
                format!("{}", rec.t_vts_k),
                format!("{psd}"),
            ])
            .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
        }
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Domain(format!("csv write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Domain(format!("csv not utf-8: {e}")))
}
