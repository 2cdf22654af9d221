//! Tracer-kinetic forward models and the spoiled gradient echo signal
//! equation.
//!
//! The extended Tofts convolution is evaluated with the exact recursion for a
//! piecewise-linear plasma curve against an exponential kernel:
//!
//! ```text
//! I_i = e^{-kΔ} I_{i-1} + Δ·g1(kΔ)·c_i + Δ·g2(kΔ)·c_{i-1}
//! g1(x) = (x - 1 + e^{-x}) / x²,   g2(x) = (1 - e^{-x} - x e^{-x}) / x²
//! ```
//!
//! At k = 0 both weights are Δ/2, so the Patlak integral is the same
//! recursion (plain trapezoid) and the two models agree in the kep → 0 limit.

use ndarray::{Array3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    check_grid, per_min_to_per_s, AcqParams, AuxMaps, DceSeries, PkMap, PlasmaCurve, TkModel,
    VoxelParams,
};

/// Tissue concentration on a time grid. Values may be negative when they
/// come from noisy signal inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCurve {
    values_mm: Vec<f64>,
    time_seconds: Vec<f64>,
}

impl ConcentrationCurve {
    pub fn new(values_mm: Vec<f64>, time_seconds: Vec<f64>) -> Result<Self> {
        if values_mm.len() != time_seconds.len() {
            return Err(Error::Dimension(format!(
                "concentration curve has {} values but {} time points",
                values_mm.len(),
                time_seconds.len()
            )));
        }
        check_grid(&time_seconds)?;
        if let Some(i) = values_mm.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalRange(format!("non-finite concentration at frame {i}")));
        }
        Ok(ConcentrationCurve { values_mm, time_seconds })
    }

    pub fn values_mm(&self) -> &[f64] {
        &self.values_mm
    }
    pub fn time_seconds(&self) -> &[f64] {
        &self.time_seconds
    }
    pub fn len(&self) -> usize {
        self.values_mm.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values_mm.is_empty()
    }
}

/// Below this kΔ the recursion weights switch to their Taylor series.
const SERIES_THRESHOLD: f64 = 1e-2;

/// Weights of one step of the exponential-convolution recursion together
/// with their derivatives with respect to the rate k.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpConvStep {
    pub decay: f64,
    pub w_curr: f64,
    pub w_prev: f64,
    pub d_decay: f64,
    pub d_w_curr: f64,
    pub d_w_prev: f64,
}

impl ExpConvStep {
    pub fn new(rate: f64, dt: f64) -> Self {
        let x = rate * dt;
        let (g1, g2, dg1, dg2) = if x.abs() < SERIES_THRESHOLD {
            let x2 = x * x;
            let x3 = x2 * x;
            let x4 = x3 * x;
            let x5 = x4 * x;
            (
                0.5 - x / 6.0 + x2 / 24.0 - x3 / 120.0 + x4 / 720.0 - x5 / 5040.0,
                0.5 - x / 3.0 + x2 / 8.0 - x3 / 30.0 + x4 / 144.0 - x5 / 840.0,
                -1.0 / 6.0 + x / 12.0 - x2 / 40.0 + x3 / 180.0 - x4 / 1008.0,
                -1.0 / 3.0 + x / 4.0 - x2 / 10.0 + x3 / 36.0 - x4 / 168.0,
            )
        } else {
            let e = (-x).exp();
            let one_minus_e = -(-x).exp_m1();
            let g1 = (x - one_minus_e) / (x * x);
            let g2 = (one_minus_e - x * e) / (x * x);
            let dg1 = one_minus_e / (x * x) - 2.0 * g1 / x;
            let dg2 = e / x - 2.0 * g2 / x;
            (g1, g2, dg1, dg2)
        };
        let decay = (-x).exp();
        ExpConvStep {
            decay,
            w_curr: dt * g1,
            w_prev: dt * g2,
            d_decay: -dt * decay,
            d_w_curr: dt * dt * dg1,
            d_w_prev: dt * dt * dg2,
        }
    }
}

/// ∫₀ᵗ c(τ)·e^{−k(t−τ)} dτ at every grid point for piecewise-linear `c`.
pub fn exp_convolution(values: &[f64], times: &[f64], rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 1..values.len() {
        let step = ExpConvStep::new(rate, times[i] - times[i - 1]);
        out[i] = step.decay * out[i - 1] + step.w_curr * values[i] + step.w_prev * values[i - 1];
    }
    out
}

/// Like [`exp_convolution`], also returning the derivative of every sample
/// with respect to the rate.
pub fn exp_convolution_with_rate_derivative(
    values: &[f64],
    times: &[f64],
    rate: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    let mut conv = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    for i in 1..n {
        let s = ExpConvStep::new(rate, times[i] - times[i - 1]);
        conv[i] = s.decay * conv[i - 1] + s.w_curr * values[i] + s.w_prev * values[i - 1];
        deriv[i] = s.decay * deriv[i - 1]
            + s.d_decay * conv[i - 1]
            + s.d_w_curr * values[i]
            + s.d_w_prev * values[i - 1];
    }
    (conv, deriv)
}

/// Running trapezoidal integral, starting at 0 on the first sample.
pub fn cumulative_trapezoid(values: &[f64], times: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 1..values.len() {
        out[i] = out[i - 1] + 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
    }
    out
}

pub fn etofts_concentration(
    ktrans_per_s: f64,
    vp: f64,
    ve: f64,
    cp: &PlasmaCurve,
) -> Result<ConcentrationCurve> {
    let values = etofts_values(ktrans_per_s, vp, ve, cp.values_mm(), cp.time_seconds())?;
    ConcentrationCurve::new(values, cp.time_seconds().to_vec())
}

pub(crate) fn etofts_values(
    ktrans_per_s: f64,
    vp: f64,
    ve: f64,
    cp: &[f64],
    times: &[f64],
) -> Result<Vec<f64>> {
    if ktrans_per_s == 0.0 {
        return Ok(cp.iter().map(|c| vp * c).collect());
    }
    if ve <= 0.0 {
        return Err(Error::DegenerateModel(format!(
            "ve = {ve} with ktrans = {ktrans_per_s} s^-1 leaves kep undefined"
        )));
    }
    let kep = ktrans_per_s / ve;
    let conv = exp_convolution(cp, times, kep);
    Ok(cp.iter().zip(&conv).map(|(c, i)| vp * c + ktrans_per_s * i).collect())
}

pub fn patlak_concentration(ktrans_per_s: f64, vp: f64, cp: &PlasmaCurve) -> Result<ConcentrationCurve> {
    let values = patlak_values(ktrans_per_s, vp, cp.values_mm(), cp.time_seconds());
    ConcentrationCurve::new(values, cp.time_seconds().to_vec())
}

pub(crate) fn patlak_values(ktrans_per_s: f64, vp: f64, cp: &[f64], times: &[f64]) -> Vec<f64> {
    let integral = cumulative_trapezoid(cp, times);
    cp.iter().zip(&integral).map(|(c, i)| vp * c + ktrans_per_s * i).collect()
}

/// Spoiled gradient echo signal model for one voxel (fixed T1 and protocol).
#[derive(Clone, Copy, Debug)]
pub struct SpgrSignal {
    a: f64,
    b: f64,
    cos_alpha: f64,
    /// (1 − e^{−A}) / (1 − cos α·e^{−A}); S/S0 tends to 1/scale as Ct → ∞.
    scale: f64,
}

impl SpgrSignal {
    pub fn new(t1_seconds: f64, acq: &AcqParams) -> Result<Self> {
        if !(t1_seconds.is_finite() && t1_seconds > 0.0) {
            return Err(Error::unit("t1", format!("must be > 0 s, got {t1_seconds}")));
        }
        let a = acq.tr_seconds() / t1_seconds;
        let b = acq.r1_per_mm_per_s() * acq.tr_seconds();
        let cos_alpha = acq.flip_angle_radians().cos();
        let num = -(-a).exp_m1();
        let den = 1.0 - cos_alpha * (-a).exp();
        if num < f64::MIN_POSITIVE || den < f64::MIN_POSITIVE {
            return Err(Error::NumericalRange(format!(
                "TR/T1 = {a:e} underflows the signal equation"
            )));
        }
        Ok(SpgrSignal { a, b, cos_alpha, scale: num / den })
    }

    /// S/S0 as a function of tissue concentration.
    pub fn relative_signal(&self, ct: f64) -> Result<f64> {
        let exponent = -self.a - self.b * ct;
        let den = 1.0 - self.cos_alpha * exponent.exp();
        if den < f64::MIN_POSITIVE {
            return Err(Error::NumericalRange(format!(
                "signal denominator vanishes at Ct = {ct} mM"
            )));
        }
        let ratio = (-exponent.exp_m1() / den) / self.scale;
        if !ratio.is_finite() {
            return Err(Error::NumericalRange(format!("non-finite signal at Ct = {ct} mM")));
        }
        Ok(ratio)
    }

    /// d(S/S0)/dCt.
    pub fn relative_signal_derivative(&self, ct: f64) -> f64 {
        let u = (-self.a - self.b * ct).exp();
        let den = 1.0 - self.cos_alpha * u;
        (1.0 - self.cos_alpha) * self.b * u / (den * den * self.scale)
    }

    /// Inverse of [`relative_signal`](Self::relative_signal). `None` when the
    /// log argument is non-positive or the ratio is at or above the
    /// saturation asymptote.
    pub fn concentration(&self, ratio: f64) -> Option<f64> {
        let x = ratio * self.scale;
        let num = x - 1.0;
        let den = x * self.cos_alpha - 1.0;
        if num >= 0.0 {
            return None;
        }
        let arg = num / den;
        if !(arg > 0.0) || !arg.is_finite() {
            return None;
        }
        Some(-(self.a + arg.ln()) / self.b)
    }

    /// Largest S/S0 the equation can produce (Ct → ∞).
    pub fn saturation_ratio(&self) -> f64 {
        1.0 / self.scale
    }
}

pub fn concentration_to_signal(
    ct: &ConcentrationCurve,
    s0: f64,
    t1_seconds: f64,
    acq: &AcqParams,
) -> Result<Vec<f64>> {
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::unit("s0", format!("must be > 0, got {s0}")));
    }
    let model = SpgrSignal::new(t1_seconds, acq)?;
    ct.values_mm().iter().map(|&c| model.relative_signal(c).map(|r| r * s0)).collect()
}

pub fn signal_to_concentration(
    signal: &[f64],
    s0: f64,
    t1_seconds: f64,
    acq: &AcqParams,
) -> Result<ConcentrationCurve> {
    let values = signal_to_concentration_values(signal, s0, t1_seconds, acq, false)?;
    ConcentrationCurve::new(values, acq.time_grid())
}

/// Converts a signal curve to concentration. With `clamp`, frames outside the
/// invertible range map to 0 instead of failing.
pub fn signal_to_concentration_values(
    signal: &[f64],
    s0: f64,
    t1_seconds: f64,
    acq: &AcqParams,
    clamp: bool,
) -> Result<Vec<f64>> {
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::unit("s0", format!("must be > 0, got {s0}")));
    }
    if signal.len() != acq.n_frames() {
        return Err(Error::Dimension(format!(
            "signal has {} frames, acquisition {}",
            signal.len(),
            acq.n_frames()
        )));
    }
    let model = SpgrSignal::new(t1_seconds, acq)?;
    signal
        .iter()
        .enumerate()
        .map(|(frame, &s)| match model.concentration(s / s0) {
            Some(c) => Ok(c),
            None if clamp => Ok(0.0),
            None => Err(Error::OutOfInvertibleRange { frame }),
        })
        .collect()
}

/// Concentration curve of one voxel under `model`; K^trans in min⁻¹.
pub fn voxel_concentration(
    model: TkModel,
    params: VoxelParams,
    cp: &[f64],
    times: &[f64],
) -> Result<Vec<f64>> {
    let k = per_min_to_per_s(params.ktrans_per_min);
    match model {
        TkModel::Patlak => Ok(patlak_values(k, params.vp, cp, times)),
        TkModel::ETofts => {
            let ve = params
                .ve
                .ok_or_else(|| Error::Config("extended Tofts voxel without ve".into()))?;
            etofts_values(k, params.vp, ve, cp, times)
        }
    }
}

/// The composed forward operator: PK maps → concentration → SPGR signal.
/// Voxels outside the mask emit their constant S0.
pub fn forward_operator(
    pk: &PkMap,
    cp: &PlasmaCurve,
    aux: &AuxMaps,
    acq: &AcqParams,
) -> Result<DceSeries> {
    let (h, w) = pk.dim();
    if aux.dim() != (h, w) {
        return Err(Error::Dimension(format!(
            "PK map is {h}x{w} but auxiliary maps are {:?}",
            aux.dim()
        )));
    }
    if cp.len() != acq.n_frames() {
        return Err(Error::Dimension(format!(
            "plasma curve has {} samples, acquisition {} frames",
            cp.len(),
            acq.n_frames()
        )));
    }
    let n = acq.n_frames();
    let times = cp.time_seconds();
    let curves: Vec<Vec<f64>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            let s0 = aux.s0()[[row, col]];
            if !aux.mask()[[row, col]] {
                return Ok(vec![s0; n]);
            }
            let ct = voxel_concentration(pk.model(), pk.voxel(row, col), cp.values_mm(), times)
                .map_err(|e| e.at_voxel(row, col))?;
            let signal = SpgrSignal::new(aux.t1_seconds()[[row, col]], acq)
                .map_err(|e| e.at_voxel(row, col))?;
            ct.iter()
                .map(|&c| signal.relative_signal(c).map(|r| r * s0))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_voxel(row, col))
        })
        .collect::<Result<_>>()?;

    let mut data = Array3::zeros((n, h, w));
    for (idx, curve) in curves.iter().enumerate() {
        let (row, col) = (idx / w, idx % w);
        data.slice_mut(ndarray::s![.., row, col]).assign(&ndarray::ArrayView1::from(curve));
    }
    DceSeries::new(data, *acq)
}

/// Baseline (pre-bolus) mean per voxel, used as an S0 estimate when S0 is
/// not known. Uses frame 0 alone if the bolus arrives at the first frame.
pub fn baseline_signal(series: &DceSeries) -> ndarray::Array2<f64> {
    let frames = series.acq().bolus_arrival_frame().max(1);
    series
        .data()
        .slice(ndarray::s![..frames, .., ..])
        .mean_axis(Axis(0))
        .expect("at least one baseline frame")
}

/// Relative enhancement S/baseline − 1 per voxel; zero outside the mask or
/// where the baseline is not positive.
pub fn relative_enhancement(series: &DceSeries, mask: &ndarray::Array2<bool>) -> Array3<f64> {
    let baseline = baseline_signal(series);
    let mut out = series.data().clone();
    for mut frame in out.axis_iter_mut(Axis(0)) {
        Zip::from(&mut frame).and(&baseline).and(mask).for_each(|v, &b, &m| {
            *v = if m && b > 0.0 { *v / b - 1.0 } else { 0.0 };
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acq() -> AcqParams {
        AcqParams::tumor_protocol()
    }

    fn unit_step(n: usize, dt: f64) -> PlasmaCurve {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        PlasmaCurve::new(vec![1.0; n], t).unwrap()
    }

    #[test]
    fn etofts_without_transfer_is_scaled_plasma() {
        let cp = PlasmaCurve::new(vec![0.0, 1.0, 3.0, 2.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        for ve in [0.0, 0.1, 0.7] {
            let ct = etofts_concentration(0.0, 0.02, ve, &cp).unwrap();
            for (c, p) in ct.values_mm().iter().zip(cp.values_mm()) {
                assert_eq!(*c, 0.02 * p);
            }
        }
    }

    #[test]
    fn etofts_matches_closed_form_for_constant_plasma() {
        // ve·c·(1 − e^{−kep t}) with kep = 0.01 s⁻¹ at t = 100 s.
        let cp = unit_step(101, 1.0);
        let ct = etofts_concentration(0.001, 0.0, 0.1, &cp).unwrap();
        let expected = 0.1 * (1.0 - (-1.0f64).exp());
        assert!((ct.values_mm()[100] - expected).abs() < 1e-12);
        assert!((expected - 0.06321).abs() < 1e-5);
    }

    #[test]
    fn zero_inputs_give_zero_tissue_curve() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cp = PlasmaCurve::zeros(t).unwrap();
        let ct = etofts_concentration(0.0, 0.0, 0.0, &cp).unwrap();
        assert!(ct.values_mm().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_ve_is_rejected() {
        let cp = unit_step(5, 1.0);
        assert!(matches!(
            etofts_concentration(0.001, 0.0, 0.0, &cp),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn patlak_constant_plasma() {
        let cp = unit_step(61, 1.0);
        let ct = patlak_concentration(0.001, 0.02, &cp).unwrap();
        assert!((ct.values_mm()[60] - 0.08).abs() < 1e-12);
        let ct0 = patlak_concentration(0.0, 0.02, &cp).unwrap();
        assert!(ct0.values_mm().iter().all(|&v| v == 0.02));
    }

    #[test]
    fn etofts_small_kep_reduces_to_patlak() {
        let t: Vec<f64> = (0..65).map(|i| i as f64 * 6.5).collect();
        let v: Vec<f64> = t.iter().map(|&x| if x < 26.0 { 0.0 } else { 5.0 * (-(x - 26.0) / 90.0).exp() }).collect();
        let cp = PlasmaCurve::new(v, t).unwrap();
        // kep = 1e-12 / 1 = 1e-12
        let e = etofts_concentration(1e-12, 0.01, 1.0, &cp).unwrap();
        let p = patlak_concentration(1e-12, 0.01, &cp).unwrap();
        for (a, b) in e.values_mm().iter().zip(p.values_mm()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let e = etofts_concentration(0.002, 0.01, 1e9, &cp).unwrap();
        let p = patlak_concentration(0.002, 0.01, &cp).unwrap();
        for (a, b) in e.values_mm().iter().zip(p.values_mm()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn recursion_weights_are_continuous_at_series_switch() {
        let below = ExpConvStep::new(SERIES_THRESHOLD * (1.0 - 1e-9), 1.0);
        let above = ExpConvStep::new(SERIES_THRESHOLD * (1.0 + 1e-9), 1.0);
        assert!((below.w_curr - above.w_curr).abs() < 1e-10);
        assert!((below.w_prev - above.w_prev).abs() < 1e-10);
        assert!((below.d_w_curr - above.d_w_curr).abs() < 1e-10);
        assert!((below.d_w_prev - above.d_w_prev).abs() < 1e-10);
    }

    #[test]
    fn rate_derivative_matches_finite_differences() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 2.5).collect();
        let v: Vec<f64> = t.iter().map(|&x| (x / 10.0).sin().abs() + 0.1).collect();
        for rate in [1e-4, 5e-3, 0.05, 0.8] {
            let (_, d) = exp_convolution_with_rate_derivative(&v, &t, rate);
            let h = rate * 1e-5;
            let up = exp_convolution(&v, &t, rate + h);
            let dn = exp_convolution(&v, &t, rate - h);
            for i in 0..t.len() {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() <= 1e-6 * (1.0 + d[i].abs()), "rate {rate} i {i}");
            }
        }
    }

    #[test]
    fn signal_equation_reference_value() {
        // TR 2.8 ms, T1 1 s, 10°, r1 3.47, Ct 1 mM; independently evaluated as 2.909109.
        let s = concentration_to_signal(
            &ConcentrationCurve::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 2.0]).unwrap(),
            1.0,
            1.0,
            &acq(),
        )
        .unwrap();
        assert_eq!(s[0], 1.0);
        assert!((s[2] - 2.909_109_204_689_79).abs() < 1e-9);
        assert!(s[0] < s[1] && s[1] < s[2]);
    }

    #[test]
    fn signal_inversion_round_trip() {
        let a = acq();
        for ct in [0.01, 0.1, 1.0, 5.0] {
            let curve = ConcentrationCurve::new(vec![ct; 65], a.time_grid()).unwrap();
            let s = concentration_to_signal(&curve, 250.0, 1.3, &a).unwrap();
            let back = signal_to_concentration(&s, 250.0, 1.3, &a).unwrap();
            for c in back.values_mm() {
                assert!(((c - ct) / ct).abs() < 1e-10);
            }
        }
        let back = signal_to_concentration(&vec![250.0; 65], 250.0, 1.3, &a).unwrap();
        assert!(back.values_mm().iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn invertibility_bound_for_reference_protocol() {
        // With T1 = 1 s the signal saturates at S/S0 = 6.41821.
        let model = SpgrSignal::new(1.0, &acq()).unwrap();
        assert!((model.saturation_ratio() - 6.418_209_917).abs() < 1e-8);
        assert!(model.concentration(6.41).is_some());
        assert!(model.concentration(6.43).is_none());
        let mut s = vec![1.0; 65];
        s[7] = 100.0;
        match signal_to_concentration(&s, 1.0, 1.0, &acq()) {
            Err(Error::OutOfInvertibleRange { frame }) => assert_eq!(frame, 7),
            other => panic!("{other:?}"),
        }
        let clamped = signal_to_concentration_values(&s, 1.0, 1.0, &acq(), true).unwrap();
        assert_eq!(clamped[7], 0.0);
    }

    #[test]
    fn signal_derivative_matches_finite_difference() {
        let model = SpgrSignal::new(1.4, &acq()).unwrap();
        for ct in [0.0, 0.3, 2.0, 7.0] {
            let h = 1e-6;
            let fd = (model.relative_signal(ct + h).unwrap() - model.relative_signal(ct - h).unwrap())
                / (2.0 * h);
            assert!((fd - model.relative_signal_derivative(ct)).abs() < 1e-7);
        }
    }

    #[test]
    fn forward_operator_zero_map_is_constant_s0() {
        use ndarray::Array2;
        let a = acq();
        let cp = PlasmaCurve::new(vec![1.0; 65], a.time_grid()).unwrap();
        let pk = PkMap::zeros(TkModel::ETofts, 3, 4);
        let s0 = Array2::from_shape_fn((3, 4), |(i, j)| 100.0 + (i * 4 + j) as f64);
        let aux = AuxMaps::new(Array2::from_elem((3, 4), 1.2), s0.clone(), Array2::from_elem((3, 4), true)).unwrap();
        let series = forward_operator(&pk, &cp, &aux, &a).unwrap();
        for f in 0..65 {
            for i in 0..3 {
                for j in 0..4 {
                    assert_eq!(series.data()[[f, i, j]], s0[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn forward_operator_single_voxel_is_composition() {
        use ndarray::Array2;
        let a = acq();
        let t = a.time_grid();
        let v: Vec<f64> = t.iter().map(|&x| if x < 26.0 { 0.0 } else { 4.0 * (-(x - 26.0) / 120.0).exp() }).collect();
        let cp = PlasmaCurve::new(v, t).unwrap();
        let pk = PkMap::new(
            TkModel::Patlak,
            Array2::from_elem((1, 1), 0.02),
            Array2::from_elem((1, 1), 0.01),
            None,
        )
        .unwrap();
        let aux = AuxMaps::new(
            Array2::from_elem((1, 1), 1.1),
            Array2::from_elem((1, 1), 300.0),
            Array2::from_elem((1, 1), true),
        )
        .unwrap();
        let series = forward_operator(&pk, &cp, &aux, &a).unwrap();
        let ct = patlak_concentration(per_min_to_per_s(0.02), 0.01, &cp).unwrap();
        let s = concentration_to_signal(&ct, 300.0, 1.1, &a).unwrap();
        for f in 0..65 {
            assert_eq!(series.data()[[f, 0, 0]], s[f]);
        }
    }
}
