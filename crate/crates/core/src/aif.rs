//! Population arterial input function, blood to plasma conversion and the
//! plausibility features used to judge an AIF.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_grid, PlasmaCurve};

/// Parametric blood curve: gamma-variate first pass, a recirculation hump
/// that washes out, and a slow tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAifParams", into = "RawAifParams")]
pub struct AifParams {
    bolus_arrival_seconds: f64,
    peak_amplitude_mm: f64,
    bolus_width_seconds: f64,
    recirculation_amplitude_mm: f64,
    washout_rate_per_s: f64,
    tail_amplitude_mm: f64,
    tail_rate_per_s: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawAifParams {
    bolus_arrival_seconds: f64,
    peak_amplitude_mm: f64,
    bolus_width_seconds: f64,
    recirculation_amplitude_mm: f64,
    washout_rate_per_s: f64,
    tail_amplitude_mm: f64,
    tail_rate_per_s: f64,
}

impl TryFrom<RawAifParams> for AifParams {
    type Error = Error;
    fn try_from(r: RawAifParams) -> Result<Self> {
        AifParams::new(
            r.bolus_arrival_seconds,
            r.peak_amplitude_mm,
            r.bolus_width_seconds,
            r.recirculation_amplitude_mm,
            r.washout_rate_per_s,
            r.tail_amplitude_mm,
            r.tail_rate_per_s,
        )
    }
}

impl From<AifParams> for RawAifParams {
    fn from(p: AifParams) -> Self {
        RawAifParams {
            bolus_arrival_seconds: p.bolus_arrival_seconds,
            peak_amplitude_mm: p.peak_amplitude_mm,
            bolus_width_seconds: p.bolus_width_seconds,
            recirculation_amplitude_mm: p.recirculation_amplitude_mm,
            washout_rate_per_s: p.washout_rate_per_s,
            tail_amplitude_mm: p.tail_amplitude_mm,
            tail_rate_per_s: p.tail_rate_per_s,
        }
    }
}

#[derive(Deserialize)]
struct AifConfigFile {
    version: u32,
    params: AifParams,
}

const DEFAULT_AIF_CONFIG: &str = include_str!("../config/population_aif.json");

impl Default for AifParams {
    fn default() -> Self {
        let file: AifConfigFile =
            serde_json::from_str(DEFAULT_AIF_CONFIG).expect("bundled AIF config parses");
        debug_assert_eq!(file.version, 1);
        file.params
    }
}

impl AifParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bolus_arrival_seconds: f64,
        peak_amplitude_mm: f64,
        bolus_width_seconds: f64,
        recirculation_amplitude_mm: f64,
        washout_rate_per_s: f64,
        tail_amplitude_mm: f64,
        tail_rate_per_s: f64,
    ) -> Result<Self> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let checks: [(&'static str, bool); 7] = [
            ("bolus_arrival_seconds", nonneg(bolus_arrival_seconds)),
            ("peak_amplitude_mm", pos(peak_amplitude_mm)),
            ("bolus_width_seconds", pos(bolus_width_seconds)),
            ("recirculation_amplitude_mm", nonneg(recirculation_amplitude_mm)),
            ("washout_rate_per_s", pos(washout_rate_per_s)),
            ("tail_amplitude_mm", nonneg(tail_amplitude_mm)),
            ("tail_rate_per_s", pos(tail_rate_per_s)),
        ];
        if let Some((field, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::unit(field, "violates its sign constraint"));
        }
        Ok(AifParams {
            bolus_arrival_seconds,
            peak_amplitude_mm,
            bolus_width_seconds,
            recirculation_amplitude_mm,
            washout_rate_per_s,
            tail_amplitude_mm,
            tail_rate_per_s,
        })
    }

    pub fn bolus_arrival_seconds(&self) -> f64 {
        self.bolus_arrival_seconds
    }
    pub fn peak_amplitude_mm(&self) -> f64 {
        self.peak_amplitude_mm
    }
    pub fn bolus_width_seconds(&self) -> f64 {
        self.bolus_width_seconds
    }

    pub fn with_arrival(self, bolus_arrival_seconds: f64) -> Result<Self> {
        RawAifParams { bolus_arrival_seconds, ..self.into() }.try_into()
    }

    /// Multiplies every amplitude by `amplitude` and every duration by
    /// `timescale` (rates by its inverse). Used to jitter subjects.
    pub fn scaled(self, amplitude: f64, timescale: f64) -> Result<Self> {
        AifParams::new(
            self.bolus_arrival_seconds,
            self.peak_amplitude_mm * amplitude,
            self.bolus_width_seconds * timescale,
            self.recirculation_amplitude_mm * amplitude,
            self.washout_rate_per_s / timescale,
            self.tail_amplitude_mm * amplitude,
            self.tail_rate_per_s / timescale,
        )
    }

    /// Blood concentration at time `t` seconds.
    pub fn blood_concentration(&self, t: f64) -> f64 {
        let u = t - self.bolus_arrival_seconds;
        if u < 0.0 {
            return 0.0;
        }
        let w = self.bolus_width_seconds;
        let x = u / w;
        let rise = -(-x).exp_m1();
        self.peak_amplitude_mm * x * x * (2.0 * (1.0 - x)).exp()
            + self.recirculation_amplitude_mm * (-self.washout_rate_per_s * u).exp() * rise
            + self.tail_amplitude_mm * (-self.tail_rate_per_s * u).exp() * rise
    }
}

/// Blood concentration curve C_b(t) sampled on `grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct BloodCurve {
    pub values_mm: Vec<f64>,
    pub time_seconds: Vec<f64>,
}

pub fn population_aif(params: &AifParams, grid: &[f64]) -> Result<BloodCurve> {
    check_grid(grid)?;
    Ok(BloodCurve {
        values_mm: grid.iter().map(|&t| params.blood_concentration(t)).collect(),
        time_seconds: grid.to_vec(),
    })
}

pub fn blood_to_plasma(cb: &BloodCurve, hct: f64) -> Result<PlasmaCurve> {
    if !(0.0..1.0).contains(&hct) {
        return Err(Error::unit("hct", format!("hematocrit must lie in [0, 1), got {hct}")));
    }
    let scale = 1.0 / (1.0 - hct);
    PlasmaCurve::new(
        cb.values_mm.iter().map(|c| c * scale).collect(),
        cb.time_seconds.clone(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AifFeatures {
    pub first_moment_seconds: f64,
    pub peak_enhancement_mm: f64,
    pub auc_mm_seconds: f64,
}

pub fn aif_quality_features(curve: &PlasmaCurve) -> Result<AifFeatures> {
    let c = curve.values_mm();
    let t = curve.time_seconds();
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyCurve);
    }
    let first_moment = c.iter().zip(t).map(|(c, t)| c * t).sum::<f64>() / total;
    let peak = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let auc = c
        .windows(2)
        .zip(t.windows(2))
        .map(|(c, t)| 0.5 * (t[1] - t[0]) * (c[0] + c[1]))
        .sum();
    Ok(AifFeatures { first_moment_seconds: first_moment, peak_enhancement_mm: peak, auc_mm_seconds: auc })
}

/// Writes `time_seconds,concentration_mM` rows with a header.
pub fn write_curve_csv<W: Write>(writer: W, time_seconds: &[f64], values_mm: &[f64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_seconds", "concentration_mM"])?;
    for (t, c) in time_seconds.iter().zip(values_mm) {
        w.write_record([format!("{t:?}"), format!("{c:?}")])?;
    }
    w.flush()
}

/// Reads a two-column curve CSV. The header row is required.
pub fn read_curve_csv<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers().map_err(|e| Error::Config(format!("AIF CSV: {e}")))?.clone();
    if header.len() != 2 || header.get(0).map(str::trim) != Some("time_seconds") {
        return Err(Error::Config(
            "AIF CSV must start with the header `time_seconds,concentration_mM`".into(),
        ));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("AIF CSV: {e}")))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("AIF CSV row {}: bad number", line + 2)))
        };
        times.push(parse(0)?);
        values.push(parse(1)?);
    }
    Ok((times, values))
}

pub fn read_plasma_csv<R: Read>(reader: R) -> Result<PlasmaCurve> {
    let (t, v) = read_curve_csv(reader)?;
    PlasmaCurve::new(v, t)
}
