//! Touchstone v1 reader and writer for one- and two-port files.
//!
//! Accepts the classic format: an optional `#` option line
//! (`# <unit> S <format> R <z0>`, defaulting to `# GHZ S MA R 50`),
//! `!` comments, and whitespace-separated data rows in ascending frequency
//! order. Two-port rows carry nine columns in `S11 S21 S12 S22` order;
//! one-port rows carry three. Version-2 keyword blocks (`[Version]` etc.)
//! are rejected, as are mixed arities and non-`S` parameter types.

use std::fmt::Write as _;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{as_f64, cast, Scalar};

use super::{OnePort, SPoint, TwoPort};

/// Frequency unit named on the option line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqUnit {
    Hz,
    KHz,
    MHz,
    GHz,
}

impl FreqUnit {
    pub fn scale_to_hz(self) -> f64 {
        match self {
            FreqUnit::Hz => 1.0,
            FreqUnit::KHz => 1e3,
            FreqUnit::MHz => 1e6,
            FreqUnit::GHz => 1e9,
        }
    }

    fn token(self) -> &'static str {
        match self {
            FreqUnit::Hz => "HZ",
            FreqUnit::KHz => "KHZ",
            FreqUnit::MHz => "MHZ",
            FreqUnit::GHz => "GHZ",
        }
    }

    fn from_token(tok: &str) -> Option<Self> {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => Some(FreqUnit::Hz),
            "KHZ" => Some(FreqUnit::KHz),
            "MHZ" => Some(FreqUnit::MHz),
            "GHZ" => Some(FreqUnit::GHz),
            _ => None,
        }
    }
}

/// Encoding of each complex entry in the data rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumberFormat {
    /// Real and imaginary parts.
    Ri,
    /// Linear magnitude and angle in degrees.
    Ma,
    /// Magnitude in dB (20 log10) and angle in degrees.
    Db,
}

impl NumberFormat {
    fn token(self) -> &'static str {
        match self {
            NumberFormat::Ri => "RI",
            NumberFormat::Ma => "MA",
            NumberFormat::Db => "DB",
        }
    }

    fn from_token(tok: &str) -> Option<Self> {
        match tok.to_ascii_uppercase().as_str() {
            "RI" => Some(NumberFormat::Ri),
            "MA" => Some(NumberFormat::Ma),
            "DB" => Some(NumberFormat::Db),
            _ => None,
        }
    }

    fn decode(self, a: f64, b: f64) -> Complex<f64> {
        match self {
            NumberFormat::Ri => Complex::new(a, b),
            NumberFormat::Ma => Complex::from_polar(a, b.to_radians()),
            NumberFormat::Db => Complex::from_polar(10f64.powf(a / 20.0), b.to_radians()),
        }
    }

    fn encode(self, z: Complex<f64>) -> (f64, f64) {
        match self {
            NumberFormat::Ri => (z.re, z.im),
            NumberFormat::Ma => (z.norm(), z.arg().to_degrees()),
            NumberFormat::Db => {
                // Floor the magnitude so exact zeros stay finite on disk.
                let db = 20.0 * z.norm().log10();
                (db.max(-300.0), z.arg().to_degrees())
            }
        }
    }
}

/// Either flavour of network a v1 file can hold.
#[derive(Clone, Debug)]
pub enum Network {
    One(OnePort<f64>),
    Two(TwoPort<f64>),
}

struct Options {
    unit: FreqUnit,
    format: NumberFormat,
    z0_ohm: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { unit: FreqUnit::GHz, format: NumberFormat::Ma, z0_ohm: 50.0 }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_option_line(line: usize, body: &str) -> Result<Options> {
    let mut opts = Options::default();
    let mut tokens = body.split_whitespace().peekable();
    while let Some(tok) = tokens.next() {
        if let Some(unit) = FreqUnit::from_token(tok) {
            opts.unit = unit;
        } else if let Some(fmt) = NumberFormat::from_token(tok) {
            opts.format = fmt;
        } else if tok.eq_ignore_ascii_case("S") {
            // Scattering parameters: the only type this reader handles.
        } else if tok.eq_ignore_ascii_case("R") {
            let val = tokens
                .next()
                .ok_or_else(|| parse_err(line, "option 'R' missing impedance value"))?;
            opts.z0_ohm = val
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("invalid reference impedance '{val}'")))?;
            if !(opts.z0_ohm.is_finite() && opts.z0_ohm > 0.0) {
                return Err(parse_err(line, format!("reference impedance must be positive, got {val}")));
            }
        } else if matches!(tok.to_ascii_uppercase().as_str(), "Y" | "Z" | "H" | "G") {
            return Err(parse_err(line, format!("unsupported parameter type '{tok}'; only S-parameters are handled")));
        } else {
            return Err(parse_err(line, format!("unrecognised option token '{tok}'")));
        }
    }
    Ok(opts)
}

struct RawRow {
    line: usize,
    values: Vec<f64>,
}

fn scan(text: &str) -> Result<(Options, Vec<RawRow>)> {
    let mut options: Option<Options> = None;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut arity: Option<usize> = None;
    let mut last_line = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = match raw.find('!') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        if body.starts_with('[') {
            return Err(parse_err(
                line,
                format!("keyword block '{body}' is Touchstone v2 syntax; only v1 files are supported"),
            ));
        }
        if let Some(rest) = body.strip_prefix('#') {
            if options.is_some() {
                return Err(parse_err(line, "second option line"));
            }
            if !rows.is_empty() {
                return Err(parse_err(line, "option line after data rows"));
            }
            options = Some(parse_option_line(line, rest)?);
            continue;
        }
        let mut values = Vec::new();
        for tok in body.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number '{tok}'")))?;
            values.push(v);
        }
        match arity {
            None => {
                if values.len() != 3 && values.len() != 9 {
                    return Err(parse_err(
                        line,
                        format!(
                            "expected 3 columns (one-port) or 9 columns (two-port), found {}",
                            values.len()
                        ),
                    ));
                }
                arity = Some(values.len());
            }
            Some(n) if values.len() != n => {
                return Err(parse_err(
                    line,
                    format!("row has {} columns but earlier rows have {n}", values.len()),
                ));
            }
            Some(_) => {}
        }
        rows.push(RawRow { line, values });
    }

    if rows.is_empty() {
        return Err(parse_err(last_line, "no data rows"));
    }
    Ok((options.unwrap_or_default(), rows))
}

fn frequencies(opts: &Options, rows: &[RawRow]) -> Result<Vec<f64>> {
    let mut freqs = Vec::with_capacity(rows.len());
    let mut prev: Option<(f64, usize)> = None;
    for row in rows {
        let f = row.values[0] * opts.unit.scale_to_hz();
        if !(f.is_finite() && f > 0.0) {
            return Err(parse_err(row.line, format!("frequency must be positive, got {}", row.values[0])));
        }
        if let Some((pf, pl)) = prev {
            if f <= pf {
                return Err(parse_err(
                    row.line,
                    format!("frequency not strictly ascending (row at line {pl} has {pf} Hz, this row {f} Hz)"),
                ));
            }
        }
        prev = Some((f, row.line));
        freqs.push(f);
    }
    Ok(freqs)
}

/// Parses a v1 file, detecting one-port vs two-port from the column count.
pub fn parse(text: &str) -> Result<Network> {
    let (opts, rows) = scan(text)?;
    let freqs = frequencies(&opts, &rows)?;
    if rows[0].values.len() == 3 {
        let gamma = rows
            .iter()
            .map(|r| opts.format.decode(r.values[1], r.values[2]))
            .collect();
        Ok(Network::One(OnePort::new(opts.z0_ohm, freqs, gamma)?))
    } else {
        let points = rows
            .iter()
            .map(|r| {
                // v1 two-port column order: S11, S21, S12, S22.
                let s11 = opts.format.decode(r.values[1], r.values[2]);
                let s21 = opts.format.decode(r.values[3], r.values[4]);
                let s12 = opts.format.decode(r.values[5], r.values[6]);
                let s22 = opts.format.decode(r.values[7], r.values[8]);
                SPoint { s11, s12, s21, s22 }
            })
            .collect();
        Ok(Network::Two(TwoPort::new(opts.z0_ohm, freqs, points)?))
    }
}

/// Parses a file that must contain two-port data.
pub fn parse_two_port(text: &str) -> Result<TwoPort<f64>> {
    match parse(text)? {
        Network::Two(net) => Ok(net),
        Network::One(_) => Err(parse_err(1, "expected two-port data, found one-port rows")),
    }
}

/// Parses a file that must contain one-port data.
pub fn parse_one_port(text: &str) -> Result<OnePort<f64>> {
    match parse(text)? {
        Network::One(net) => Ok(net),
        Network::Two(_) => Err(parse_err(1, "expected one-port data, found two-port rows")),
    }
}

fn push_pair(out: &mut String, fmt: NumberFormat, z: Complex<f64>) {
    let (a, b) = fmt.encode(z);
    let _ = write!(out, " {a:e} {b:e}");
}

/// Renders two-port data as Touchstone v1 text.
pub fn write_two_port<T: Scalar>(net: &TwoPort<T>, unit: FreqUnit, fmt: NumberFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} S {} R {:e}", unit.token(), fmt.token(), as_f64(net.z0_ohm));
    for (f, p) in net.freqs_hz.iter().zip(&net.points) {
        let _ = write!(out, "{:e}", as_f64(*f) / unit.scale_to_hz());
        for z in [p.s11, p.s21, p.s12, p.s22] {
            push_pair(&mut out, fmt, Complex::new(as_f64(z.re), as_f64(z.im)));
        }
        out.push('\n');
    }
    out
}

/// Renders one-port data as Touchstone v1 text.
pub fn write_one_port<T: Scalar>(net: &OnePort<T>, unit: FreqUnit, fmt: NumberFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} S {} R {:e}", unit.token(), fmt.token(), as_f64(net.z0_ohm));
    for (f, g) in net.freqs_hz.iter().zip(&net.gamma) {
        let _ = write!(out, "{:e}", as_f64(*f) / unit.scale_to_hz());
        push_pair(&mut out, fmt, Complex::new(as_f64(g.re), as_f64(g.im)));
        out.push('\n');
    }
    out
}

/// Converts parsed `f64` two-port data into another scalar width.
pub fn convert_two_port<T: Scalar>(net: &TwoPort<f64>) -> TwoPort<T> {
    let cc = |z: Complex<f64>| Complex::new(cast::<T>(z.re), cast::<T>(z.im));
    TwoPort {
        z0_ohm: cast(net.z0_ohm),
        freqs_hz: net.freqs_hz.iter().map(|f| cast(*f)).collect(),
        points: net
            .points
            .iter()
            .map(|p| SPoint { s11: cc(p.s11), s12: cc(p.s12), s21: cc(p.s21), s22: cc(p.s22) })
            .collect(),
    }
}
