//! Per-voxel PK estimation: linear least squares for Patlak and extended
//! Tofts, Levenberg–Marquardt refinement, and whole-volume fitting.
//!
//! Internally K^trans is per second; results report it per minute.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    cumulative_trapezoid, exp_convolution_with_rate_derivative, signal_to_concentration_values,
    ConcentrationCurve,
};
use crate::types::{
    per_min_to_per_s, per_s_to_per_min, AuxMaps, DceSeries, PkMap, PlasmaCurve, TkModel, VoxelParams,
};

/// kep at or below this (s⁻¹) is treated as unidentifiable in the Tofts LLS.
const KEP_TOLERANCE: f64 = 1e-8;
/// Smallest singular value ratio of the column-normalised design accepted as full rank.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Lls,
    Nlls,
}

impl std::str::FromStr for FitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lls" => Ok(FitMethod::Lls),
            "nlls" => Ok(FitMethod::Nlls),
            other => Err(Error::Config(format!("unknown fit method `{other}`"))),
        }
    }
}

/// Box constraints, K^trans in min⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub ktrans_per_min: (f64, f64),
    pub vp: (f64, f64),
    pub ve: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds { ktrans_per_min: (0.0, 1.0), vp: (0.0, 1.0), ve: (1e-6, 1.0) }
    }
}

impl ParamBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("ktrans", self.ktrans_per_min), ("vp", self.vp), ("ve", self.ve)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bounds for {name} must satisfy lo <= hi")));
            }
        }
        Ok(())
    }

    /// Bounds in internal units (K^trans per second), model order.
    fn internal(&self, model: TkModel) -> Vec<(f64, f64)> {
        let k = (per_min_to_per_s(self.ktrans_per_min.0), per_min_to_per_s(self.ktrans_per_min.1));
        match model {
            TkModel::Patlak => vec![k, self.vp],
            TkModel::ETofts => vec![k, self.vp, self.ve],
        }
    }

    pub fn contains(&self, p: &VoxelParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.ktrans_per_min, self.ktrans_per_min)
            && inside(p.vp, self.vp)
            && p.ve.is_none_or(|ve| inside(ve, self.ve))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    pub model: TkModel,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    #[serde(default)]
    pub parameter_bounds: ParamBounds,
    /// Model-order start point, K^trans in min⁻¹. LLS output when absent.
    #[serde(default)]
    pub initial_guess: Option<Vec<f64>>,
}

impl FitConfig {
    pub fn new(method: FitMethod, model: TkModel) -> Self {
        FitConfig {
            method,
            model,
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            parameter_bounds: ParamBounds::default(),
            initial_guess: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.parameter_bounds.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient_tolerance must be positive".into()));
        }
        if let Some(g) = &self.initial_guess {
            if g.len() != self.model.n_params() {
                return Err(Error::Config(format!(
                    "initial guess has {} entries, {} needs {}",
                    g.len(),
                    self.model,
                    self.model.n_params()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Model order, K^trans in min⁻¹. For a degenerate Tofts fit only
    /// (K^trans, v_p) are present.
    pub parameters: Vec<f64>,
    pub residual_norm: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Some estimate fell outside its bound and was projected back.
    pub clamped: bool,
    /// kep was not identifiable; the fit reduced to Patlak.
    pub degenerate_kep: bool,
    /// Sum of squared residuals after each accepted LM step (NLLS only).
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn voxel_params(&self) -> VoxelParams {
        VoxelParams {
            ktrans_per_min: self.parameters[0],
            vp: self.parameters[1],
            ve: self.parameters.get(2).copied(),
        }
    }
}

fn check_curves(ct: &ConcentrationCurve, cp: &PlasmaCurve, min_frames: usize) -> Result<()> {
    if ct.len() != cp.len() {
        return Err(Error::Dimension(format!(
            "tissue curve has {} frames, plasma curve {}",
            ct.len(),
            cp.len()
        )));
    }
    if ct.len() < min_frames {
        return Err(Error::Dimension(format!("need at least {min_frames} frames, got {}", ct.len())));
    }
    if ct.time_seconds() != cp.time_seconds() {
        return Err(Error::Dimension("tissue and plasma curves use different time grids".into()));
    }
    Ok(())
}

/// Least squares solve with column normalisation and an SVD rank check.
fn solve_lls(columns: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let m = columns.len();
    let norms: Vec<f64> = columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if norms.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let a = DMatrix::from_fn(n, m, |i, j| columns[j][i] / norms[j]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOLERANCE * smax) {
        return Err(Error::SingularDesign);
    }
    let x = svd.solve(&b, 0.0).map_err(|_| Error::SingularDesign)?;
    Ok(x.iter().zip(&norms).map(|(x, s)| x / s).collect())
}

fn clamp_flag(v: f64, (lo, hi): (f64, f64), clamped: &mut bool) -> f64 {
    if v < lo {
        *clamped = true;
        lo
    } else if v > hi {
        *clamped = true;
        hi
    } else {
        v
    }
}

fn residual_norm(model: TkModel, internal: &[f64], ct: &[f64], cp: &[f64], t: &[f64]) -> f64 {
    objective_internal(model, internal, ct, cp, t).sqrt()
}

fn patlak_lls_internal(
    ct: &ConcentrationCurve,
    cp: &PlasmaCurve,
    bounds: &ParamBounds,
) -> Result<FitResult> {
    check_curves(ct, cp, 3)?;
    let t = cp.time_seconds();
    let integral = cumulative_trapezoid(cp.values_mm(), t);
    let theta = solve_lls(&[cp.values_mm().to_vec(), integral], ct.values_mm())?;
    let b = bounds.internal(TkModel::Patlak);
    let mut clamped = false;
    let k = clamp_flag(theta[1], b[0], &mut clamped);
    let vp = clamp_flag(theta[0], b[1], &mut clamped);
    let internal = [k, vp];
    Ok(FitResult {
        parameters: vec![per_s_to_per_min(k), vp],
        residual_norm: residual_norm(TkModel::Patlak, &internal, ct.values_mm(), cp.values_mm(), t),
        iterations_used: 0,
        converged: true,
        clamped,
        degenerate_kep: false,
        cost_history: Vec::new(),
    })
}

pub fn fit_patlak_lls(ct: &ConcentrationCurve, cp: &PlasmaCurve) -> Result<FitResult> {
    patlak_lls_internal(ct, cp, &ParamBounds::default())
}

fn etofts_lls_internal(
    ct: &ConcentrationCurve,
    cp: &PlasmaCurve,
    bounds: &ParamBounds,
) -> Result<FitResult> {
    check_curves(ct, cp, 4)?;
    let t = cp.time_seconds();
    let int_cp = cumulative_trapezoid(cp.values_mm(), t);
    let neg_int_ct: Vec<f64> = cumulative_trapezoid(ct.values_mm(), t).iter().map(|v| -v).collect();
    let theta = match solve_lls(&[cp.values_mm().to_vec(), int_cp.clone(), neg_int_ct], ct.values_mm()) {
        Ok(theta) => theta,
        // ∫Ct collinear with ∫Cp: no backflux information, Patlak is all we can say.
        Err(Error::SingularDesign) => {
            let mut fit = patlak_lls_internal(ct, cp, bounds)?;
            fit.degenerate_kep = true;
            return Ok(fit);
        }
        Err(e) => return Err(e),
    };
    let (vp_raw, kep) = (theta[0], theta[2]);
    if kep <= KEP_TOLERANCE {
        let mut fit = patlak_lls_internal(ct, cp, bounds)?;
        fit.degenerate_kep = true;
        return Ok(fit);
    }
    let b = bounds.internal(TkModel::ETofts);
    let mut clamped = false;
    let vp = clamp_flag(vp_raw, b[1], &mut clamped);
    let k_raw = theta[1] - kep * vp_raw;
    let k = clamp_flag(k_raw, b[0], &mut clamped);
    let ve = clamp_flag(k_raw / kep, b[2], &mut clamped);
    let internal = [k, vp, ve];
    Ok(FitResult {
        parameters: vec![per_s_to_per_min(k), vp, ve],
        residual_norm: residual_norm(TkModel::ETofts, &internal, ct.values_mm(), cp.values_mm(), t),
        iterations_used: 0,
        converged: true,
        clamped,
        degenerate_kep: false,
        cost_history: Vec::new(),
    })
}

/// Linearised extended Tofts fit:
/// `Ct = vp·Cp + (K^trans + kep·vp)·∫Cp − kep·∫Ct`.
pub fn fit_etofts_lls(ct: &ConcentrationCurve, cp: &PlasmaCurve) -> Result<FitResult> {
    etofts_lls_internal(ct, cp, &ParamBounds::default())
}

pub fn fit_lls(model: TkModel, ct: &ConcentrationCurve, cp: &PlasmaCurve, bounds: &ParamBounds) -> Result<FitResult> {
    match model {
        TkModel::Patlak => patlak_lls_internal(ct, cp, bounds),
        TkModel::ETofts => etofts_lls_internal(ct, cp, bounds),
    }
}

/// Model curve and Jacobian (columns in model order, internal units).
fn model_and_jacobian(model: TkModel, p: &[f64], cp: &[f64], t: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    match model {
        TkModel::Patlak => {
            let integral = cumulative_trapezoid(cp, t);
            let f = cp.iter().zip(&integral).map(|(c, i)| p[1] * c + p[0] * i).collect();
            (f, vec![integral, cp.to_vec()])
        }
        TkModel::ETofts => {
            let (k, vp, ve) = (p[0], p[1], p[2]);
            let kep = k / ve;
            let (conv, dconv) = exp_convolution_with_rate_derivative(cp, t, kep);
            let f = cp.iter().zip(&conv).map(|(c, i)| vp * c + k * i).collect();
            let dk = conv.iter().zip(&dconv).map(|(i, d)| i + kep * d).collect();
            let dve = dconv.iter().map(|d| -kep * kep * d).collect();
            (f, vec![dk, cp.to_vec(), dve])
        }
    }
}

fn objective_internal(model: TkModel, p: &[f64], ct: &[f64], cp: &[f64], t: &[f64]) -> f64 {
    let (f, _) = model_and_jacobian(model, p, cp, t);
    f.iter().zip(ct).map(|(f, c)| (f - c) * (f - c)).sum()
}

/// Sum of squared residuals for model-order parameters with K^trans in min⁻¹.
pub fn objective(model: TkModel, params: &[f64], ct: &ConcentrationCurve, cp: &PlasmaCurve) -> f64 {
    let mut p = params.to_vec();
    p[0] = per_min_to_per_s(p[0]);
    objective_internal(model, &p, ct.values_mm(), cp.values_mm(), cp.time_seconds())
}

fn default_guess(model: TkModel) -> Vec<f64> {
    match model {
        TkModel::Patlak => vec![0.01, 0.01],
        TkModel::ETofts => vec![0.01, 0.01, 0.1],
    }
}

/// Levenberg–Marquardt with Marquardt diagonal scaling and projection onto
/// the parameter box.
pub fn fit_nlls(ct: &ConcentrationCurve, cp: &PlasmaCurve, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let model = cfg.model;
    check_curves(ct, cp, model.n_params() + 1)?;
    let bounds = cfg.parameter_bounds.internal(model);
    let (cpv, ctv, t) = (cp.values_mm(), ct.values_mm(), cp.time_seconds());

    let start = match &cfg.initial_guess {
        Some(g) => g.clone(),
        None => match fit_lls(model, ct, cp, &cfg.parameter_bounds) {
            Ok(fit) if !fit.degenerate_kep => fit.parameters,
            Ok(fit) if model == TkModel::ETofts => vec![fit.parameters[0], fit.parameters[1], 0.1],
            Ok(fit) => fit.parameters,
            Err(Error::SingularDesign) => default_guess(model),
            Err(e) => return Err(e),
        },
    };
    let mut p: Vec<f64> = start;
    p[0] = per_min_to_per_s(p[0]);
    let mut clamped = false;
    for (v, b) in p.iter_mut().zip(&bounds) {
        *v = clamp_flag(*v, *b, &mut clamped);
    }
    if model == TkModel::ETofts && p[2] <= 0.0 {
        return Err(Error::DegenerateModel("ve bound must exclude 0 for NLLS".into()));
    }

    let np = p.len();
    let mut lambda = 1e-3;
    let mut cost = objective_internal(model, &p, ctv, cpv, t);
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let (f, jac) = model_and_jacobian(model, &p, cpv, t);
        let r: Vec<f64> = f.iter().zip(ctv).map(|(f, c)| f - c).collect();
        let mut jtj = DMatrix::<f64>::zeros(np, np);
        let mut grad = DVector::<f64>::zeros(np);
        for a in 0..np {
            grad[a] = jac[a].iter().zip(&r).map(|(j, r)| j * r).sum();
            for b in 0..np {
                jtj[(a, b)] = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
            }
        }
        // Projected gradient: ignore components pushing against an active bound.
        let pg = (0..np)
            .map(|a| {
                let at_lo = p[a] <= bounds[a].0 && grad[a] > 0.0;
                let at_hi = p[a] >= bounds[a].1 && grad[a] < 0.0;
                if at_lo || at_hi { 0.0 } else { grad[a].abs() }
            })
            .fold(0.0, f64::max);
        if pg < cfg.gradient_tolerance {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut lhs = jtj.clone();
            for a in 0..np {
                lhs[(a, a)] += lambda * jtj[(a, a)].max(1e-300);
            }
            let Some(chol) = lhs.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let candidate: Vec<f64> =
                (0..np).map(|a| (p[a] + delta[a]).clamp(bounds[a].0, bounds[a].1)).collect();
            let new_cost = objective_internal(model, &candidate, ctv, cpv, t);
            if new_cost.is_finite() && new_cost < cost {
                let rel_change = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                p = candidate;
                cost = new_cost;
                history.push(cost);
                lambda /= 10.0;
                accepted = true;
                if rel_change < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No descent direction is resolvable in floating point: a stationary point.
            converged = true;
            break;
        }
    }

    let mut params = p;
    params[0] = per_s_to_per_min(params[0]);
    Ok(FitResult {
        parameters: params,
        residual_norm: cost.sqrt(),
        iterations_used: iterations,
        converged,
        clamped,
        degenerate_kep: false,
        cost_history: history,
    })
}

/// Fits one tissue curve with the configured method.
pub fn fit_curve(ct: &ConcentrationCurve, cp: &PlasmaCurve, cfg: &FitConfig) -> Result<FitResult> {
    match cfg.method {
        FitMethod::Lls => fit_lls(cfg.model, ct, cp, &cfg.parameter_bounds),
        FitMethod::Nlls => fit_nlls(ct, cp, cfg),
    }
}

/// Per-voxel status bits written to the failure-code raster.
pub mod status {
    pub const OK: u8 = 0;
    pub const NON_INVERTIBLE: u8 = 1;
    pub const SINGULAR_DESIGN: u8 = 2;
    pub const NOT_CONVERGED: u8 = 4;
    pub const DEGENERATE_KEP: u8 = 8;
    pub const CLAMPED: u8 = 16;
    pub const OTHER_ERROR: u8 = 32;

    /// Bits that mean the voxel has no usable estimate.
    pub const FAILURE_MASK: u8 = NON_INVERTIBLE | SINGULAR_DESIGN | NOT_CONVERGED | OTHER_ERROR;

    pub fn is_failure(code: u8) -> bool {
        code & FAILURE_MASK != 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeFit {
    pub map: PkMap,
    pub status: Array2<u8>,
    pub n_masked: usize,
    pub n_failed: usize,
}

fn fit_voxel(
    series: &DceSeries,
    cp: &PlasmaCurve,
    aux: &AuxMaps,
    cfg: &FitConfig,
    row: usize,
    col: usize,
) -> (VoxelParams, u8) {
    let zero = VoxelParams {
        ktrans_per_min: 0.0,
        vp: 0.0,
        ve: (cfg.model == TkModel::ETofts).then_some(0.0),
    };
    let signal: Vec<f64> = series.voxel_curve(row, col).to_vec();
    let acq = series.acq();
    let ct = match signal_to_concentration_values(&signal, aux.s0()[[row, col]], aux.t1_seconds()[[row, col]], acq, false)
        .and_then(|v| ConcentrationCurve::new(v, cp.time_seconds().to_vec()))
    {
        Ok(ct) => ct,
        Err(Error::OutOfInvertibleRange { .. }) => return (zero, status::NON_INVERTIBLE),
        Err(_) => return (zero, status::OTHER_ERROR),
    };
    match fit_curve(&ct, cp, cfg) {
        Ok(fit) => {
            let mut code = status::OK;
            if !fit.converged {
                code |= status::NOT_CONVERGED;
            }
            if fit.clamped {
                code |= status::CLAMPED;
            }
            if fit.degenerate_kep {
                code |= status::DEGENERATE_KEP;
            }
            let mut p = fit.voxel_params();
            if cfg.model == TkModel::ETofts && p.ve.is_none() {
                p.ve = Some(0.0);
            }
            if status::is_failure(code) {
                (zero, code)
            } else {
                (p, code)
            }
        }
        Err(Error::SingularDesign) => (zero, status::SINGULAR_DESIGN),
        Err(_) => (zero, status::OTHER_ERROR),
    }
}

/// Fits every masked voxel. Per-voxel failures are recorded in the status
/// raster and leave zeros in the map; the volume never aborts because of one
/// voxel. Output does not depend on the rayon thread count.
pub fn fit_volume(series: &DceSeries, cp: &PlasmaCurve, aux: &AuxMaps, cfg: &FitConfig) -> Result<VolumeFit> {
    cfg.validate()?;
    let (h, w) = series.dim();
    if aux.dim() != (h, w) {
        return Err(Error::Dimension(format!(
            "series is {h}x{w} but auxiliary maps are {:?}",
            aux.dim()
        )));
    }
    if cp.len() != series.acq().n_frames() {
        return Err(Error::Dimension("plasma curve is not on the series time grid".into()));
    }
    let results: Vec<Option<(VoxelParams, u8)>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            aux.mask()[[row, col]].then(|| fit_voxel(series, cp, aux, cfg, row, col))
        })
        .collect();

    let mut k = Array2::zeros((h, w));
    let mut vp = Array2::zeros((h, w));
    let mut ve = Array2::zeros((h, w));
    let mut codes = Array2::zeros((h, w));
    let (mut n_masked, mut n_failed) = (0, 0);
    for (idx, res) in results.into_iter().enumerate() {
        let Some((p, code)) = res else { continue };
        let (row, col) = (idx / w, idx % w);
        n_masked += 1;
        if status::is_failure(code) {
            n_failed += 1;
        }
        k[[row, col]] = p.ktrans_per_min;
        vp[[row, col]] = p.vp;
        ve[[row, col]] = p.ve.unwrap_or(0.0);
        codes[[row, col]] = code;
    }
    let map = PkMap::new(cfg.model, k, vp, (cfg.model == TkModel::ETofts).then_some(ve))?;
    Ok(VolumeFit { map, status: codes, n_masked, n_failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aif::{blood_to_plasma, population_aif, AifParams};
    use crate::physics::{etofts_concentration, patlak_concentration};
    use crate::types::AcqParams;

    fn default_cp(acq: &AcqParams) -> PlasmaCurve {
        let cb = population_aif(&AifParams::default(), &acq.time_grid()).unwrap();
        blood_to_plasma(&cb, 0.45).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn patlak_lls_recovers_table_magnitudes() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        let ct = patlak_concentration(per_min_to_per_s(0.013), 0.00454, &cp).unwrap();
        let fit = fit_patlak_lls(&ct, &cp).unwrap();
        assert!(rel(fit.parameters[0], 0.013) < 1e-9);
        assert!(rel(fit.parameters[1], 0.00454) < 1e-9);
        assert!(!fit.clamped);
    }

    #[test]
    fn patlak_lls_pure_vascular_and_zero() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        let ct = ConcentrationCurve::new(
            cp.values_mm().iter().map(|c| 0.02 * c).collect(),
            cp.time_seconds().to_vec(),
        )
        .unwrap();
        let fit = fit_patlak_lls(&ct, &cp).unwrap();
        assert!(fit.parameters[0].abs() < 1e-12);
        assert!((fit.parameters[1] - 0.02).abs() < 1e-12);

        let zero = ConcentrationCurve::new(vec![0.0; cp.len()], cp.time_seconds().to_vec()).unwrap();
        let fit = fit_patlak_lls(&zero, &cp).unwrap();
        assert_eq!(fit.parameters, vec![0.0, 0.0]);
    }

    #[test]
    fn patlak_lls_singular_for_zero_plasma() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cp = PlasmaCurve::zeros(t.clone()).unwrap();
        let ct = ConcentrationCurve::new(vec![0.0; 10], t).unwrap();
        assert_eq!(fit_patlak_lls(&ct, &cp), Err(Error::SingularDesign));
    }

    #[test]
    fn etofts_lls_recovers_on_fine_grid() {
        let acq = AcqParams::tumor_protocol().with_frame_interval(0.5).unwrap().with_n_frames(845).unwrap();
        let cp = default_cp(&acq);
        let ct = etofts_concentration(per_min_to_per_s(0.013), 0.00454, 0.042, &cp).unwrap();
        let fit = fit_etofts_lls(&ct, &cp).unwrap();
        assert!(!fit.degenerate_kep);
        assert!(rel(fit.parameters[0], 0.013) < 1e-3, "{:?}", fit.parameters);
        assert!(rel(fit.parameters[1], 0.00454) < 1e-3, "{:?}", fit.parameters);
        assert!(rel(fit.parameters[2], 0.042) < 1e-3, "{:?}", fit.parameters);
    }

    #[test]
    fn etofts_lls_without_transfer_flags_degenerate_kep() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        let ct = etofts_concentration(0.0, 0.03, 0.2, &cp).unwrap();
        let fit = fit_etofts_lls(&ct, &cp).unwrap();
        assert!(fit.degenerate_kep);
        assert!(fit.parameters[0].abs() < 1e-10);
        assert!((fit.parameters[1] - 0.03).abs() < 1e-12);
        assert_eq!(fit.parameters.len(), 2);

        let zero = ConcentrationCurve::new(vec![0.0; cp.len()], cp.time_seconds().to_vec()).unwrap();
        let fit = fit_etofts_lls(&zero, &cp).unwrap();
        assert!(fit.parameters.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nlls_patlak_converges_immediately_from_lls() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        let ct = patlak_concentration(per_min_to_per_s(0.013), 0.00454, &cp).unwrap();
        let lls = fit_patlak_lls(&ct, &cp).unwrap();
        let fit = fit_nlls(&ct, &cp, &FitConfig::new(FitMethod::Nlls, TkModel::Patlak)).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations_used <= 3);
        for (a, b) in fit.parameters.iter().zip(&lls.parameters) {
            assert!(rel(*a, *b) < 1e-10);
        }
    }

    #[test]
    fn nlls_etofts_from_perturbed_start() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        let truth = [0.013, 0.00454, 0.042];
        let ct = etofts_concentration(per_min_to_per_s(truth[0]), truth[1], truth[2], &cp).unwrap();
        let mut cfg = FitConfig::new(FitMethod::Nlls, TkModel::ETofts);
        cfg.initial_guess = Some(truth.iter().map(|v| v * 1.5).collect());
        let fit = fit_nlls(&ct, &cp, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_norm.powi(2) < 1e-12);
        for (a, b) in fit.parameters.iter().zip(&truth) {
            assert!(rel(*a, *b) < 1e-6, "{:?}", fit.parameters);
        }
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nlls_respects_bounds() {
        let cp = default_cp(&AcqParams::tumor_protocol());
        // Negative vascular fraction in the data: the optimum sits on the bound.
        let ct = patlak_concentration(per_min_to_per_s(0.02), -0.01, &cp).unwrap();
        let fit = fit_nlls(&ct, &cp, &FitConfig::new(FitMethod::Nlls, TkModel::Patlak)).unwrap();
        assert_eq!(fit.parameters[1], 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn fit_config_validation() {
        let mut cfg = FitConfig::new(FitMethod::Nlls, TkModel::ETofts);
        cfg.initial_guess = Some(vec![0.1]);
        assert!(cfg.validate().is_err());
        let mut cfg = FitConfig::new(FitMethod::Nlls, TkModel::ETofts);
        cfg.parameter_bounds.vp = (1.0, 0.0);
        assert!(cfg.validate().is_err());
    }
}
