//! Shared domain types.
//!
//! Every constructor validates its invariants, so a value of any of these
//! types is always internally consistent. Internal time is seconds and
//! concentration is mM; K^trans is stored per minute in [`PkMap`] (the
//! reporting unit) and converted to per second with [`per_min_to_per_s`]
//! wherever the physics needs it.

use ndarray::{Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relaxivity of gadobutrol at the field strengths of interest, mM⁻¹s⁻¹.
pub const GADOBUTROL_R1: f64 = 3.47;

/// Blood hematocrit used for blood to plasma conversion.
pub const DEFAULT_HEMATOCRIT: f64 = 0.45;

pub fn per_min_to_per_s(rate_per_min: f64) -> f64 {
    rate_per_min / 60.0
}

pub fn per_s_to_per_min(rate_per_s: f64) -> f64 {
    rate_per_s * 60.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TkModel {
    #[serde(rename = "etofts")]
    ETofts,
    #[serde(rename = "patlak")]
    Patlak,
}

impl TkModel {
    pub fn n_params(self) -> usize {
        match self {
            TkModel::ETofts => 3,
            TkModel::Patlak => 2,
        }
    }

    /// Parameter names in storage order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            TkModel::ETofts => &["ktrans", "vp", "ve"],
            TkModel::Patlak => &["ktrans", "vp"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TkModel::ETofts => "etofts",
            TkModel::Patlak => "patlak",
        }
    }
}

impl std::str::FromStr for TkModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "etofts" => Ok(TkModel::ETofts),
            "patlak" => Ok(TkModel::Patlak),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for TkModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acquisition parameters of a spoiled gradient echo DCE series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAcqParams", into = "RawAcqParams")]
pub struct AcqParams {
    tr_seconds: f64,
    flip_angle_radians: f64,
    r1_per_mm_per_s: f64,
    frame_interval_seconds: f64,
    n_frames: usize,
    bolus_arrival_frame: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawAcqParams {
    tr_seconds: f64,
    flip_angle_radians: f64,
    r1_per_mm_per_s: f64,
    frame_interval_seconds: f64,
    n_frames: usize,
    bolus_arrival_frame: usize,
}

impl TryFrom<RawAcqParams> for AcqParams {
    type Error = Error;

    fn try_from(r: RawAcqParams) -> Result<Self> {
        AcqParams {
            tr_seconds: r.tr_seconds,
            flip_angle_radians: r.flip_angle_radians,
            r1_per_mm_per_s: r.r1_per_mm_per_s,
            frame_interval_seconds: r.frame_interval_seconds,
            n_frames: r.n_frames,
            bolus_arrival_frame: r.bolus_arrival_frame,
        }
        .validate()
    }
}

impl From<AcqParams> for RawAcqParams {
    fn from(a: AcqParams) -> Self {
        RawAcqParams {
            tr_seconds: a.tr_seconds,
            flip_angle_radians: a.flip_angle_radians,
            r1_per_mm_per_s: a.r1_per_mm_per_s,
            frame_interval_seconds: a.frame_interval_seconds,
            n_frames: a.n_frames,
            bolus_arrival_frame: a.bolus_arrival_frame,
        }
    }
}

impl AcqParams {
    pub fn new(
        tr_seconds: f64,
        flip_angle_radians: f64,
        r1_per_mm_per_s: f64,
        frame_interval_seconds: f64,
        n_frames: usize,
        bolus_arrival_frame: usize,
    ) -> Result<Self> {
        AcqParams {
            tr_seconds,
            flip_angle_radians,
            r1_per_mm_per_s,
            frame_interval_seconds,
            n_frames,
            bolus_arrival_frame,
        }
        .validate()
    }

    /// Checks every field invariant, returning the value unchanged on success.
    pub fn validate(self) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.tr_seconds) {
            return Err(Error::unit("tr", format!("must be > 0 s, got {}", self.tr_seconds)));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.flip_angle_radians > 0.0 && self.flip_angle_radians < half_pi) {
            return Err(Error::unit(
                "flip_angle",
                format!("must lie in (0, pi/2) rad, got {}", self.flip_angle_radians),
            ));
        }
        if !positive(self.r1_per_mm_per_s) {
            return Err(Error::unit("r1", format!("must be > 0, got {}", self.r1_per_mm_per_s)));
        }
        if !positive(self.frame_interval_seconds) {
            return Err(Error::unit(
                "frame_interval",
                format!("must be > 0 s, got {}", self.frame_interval_seconds),
            ));
        }
        if self.n_frames < 2 {
            return Err(Error::unit("n_frames", format!("need at least 2, got {}", self.n_frames)));
        }
        if self.bolus_arrival_frame >= self.n_frames {
            return Err(Error::unit(
                "bolus_arrival_frame",
                format!("{} is not below n_frames {}", self.bolus_arrival_frame, self.n_frames),
            ));
        }
        Ok(self)
    }

    /// 2.8 ms TR, 10° flip, gadobutrol, 6.5 s frames, 65 frames, bolus after frame 4.
    pub fn tumor_protocol() -> Self {
        AcqParams::new(0.0028, 10f64.to_radians(), GADOBUTROL_R1, 6.5, 65, 4)
            .expect("constant protocol is valid")
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }
    pub fn flip_angle_radians(&self) -> f64 {
        self.flip_angle_radians
    }
    pub fn r1_per_mm_per_s(&self) -> f64 {
        self.r1_per_mm_per_s
    }
    pub fn frame_interval_seconds(&self) -> f64 {
        self.frame_interval_seconds
    }
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    pub fn bolus_arrival_frame(&self) -> usize {
        self.bolus_arrival_frame
    }

    pub fn bolus_arrival_seconds(&self) -> f64 {
        self.bolus_arrival_frame as f64 * self.frame_interval_seconds
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..self.n_frames).map(|i| i as f64 * self.frame_interval_seconds).collect()
    }

    pub fn with_n_frames(self, n_frames: usize) -> Result<Self> {
        AcqParams { n_frames, ..self }.validate()
    }

    pub fn with_frame_interval(self, frame_interval_seconds: f64) -> Result<Self> {
        AcqParams { frame_interval_seconds, ..self }.validate()
    }
}

/// Standalone form of [`AcqParams::validate`].
pub fn validate_units(acq: AcqParams) -> Result<AcqParams> {
    acq.validate()
}

/// Sampled plasma concentration on a strictly increasing time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct PlasmaCurve {
    values_mm: Vec<f64>,
    time_seconds: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawCurve {
    time_seconds: Vec<f64>,
    values_mm: Vec<f64>,
}

impl TryFrom<RawCurve> for PlasmaCurve {
    type Error = Error;
    fn try_from(r: RawCurve) -> Result<Self> {
        PlasmaCurve::new(r.values_mm, r.time_seconds)
    }
}

impl From<PlasmaCurve> for RawCurve {
    fn from(c: PlasmaCurve) -> Self {
        RawCurve { time_seconds: c.time_seconds, values_mm: c.values_mm }
    }
}

pub(crate) fn check_grid(time_seconds: &[f64]) -> Result<()> {
    if time_seconds.iter().any(|t| !t.is_finite()) {
        return Err(Error::unit("time", "time grid contains non-finite values"));
    }
    if time_seconds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::unit("time", "time grid must be strictly increasing"));
    }
    Ok(())
}

impl PlasmaCurve {
    pub fn new(values_mm: Vec<f64>, time_seconds: Vec<f64>) -> Result<Self> {
        if values_mm.len() != time_seconds.len() {
            return Err(Error::Dimension(format!(
                "plasma curve has {} values but {} time points",
                values_mm.len(),
                time_seconds.len()
            )));
        }
        check_grid(&time_seconds)?;
        if values_mm.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::unit("plasma", "concentrations must be finite and >= 0"));
        }
        Ok(PlasmaCurve { values_mm, time_seconds })
    }

    pub fn zeros(time_seconds: Vec<f64>) -> Result<Self> {
        PlasmaCurve::new(vec![0.0; time_seconds.len()], time_seconds)
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

/// Per-voxel parameter maps for one tracer-kinetic model.
///
/// K^trans is in min⁻¹, v_p and v_e are dimensionless fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct PkMap {
    model: TkModel,
    ktrans_per_min: Array2<f64>,
    vp: Array2<f64>,
    ve: Option<Array2<f64>>,
}

/// Parameters of a single voxel; K^trans in min⁻¹.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelParams {
    pub ktrans_per_min: f64,
    pub vp: f64,
    pub ve: Option<f64>,
}

impl PkMap {
    pub fn new(
        model: TkModel,
        ktrans_per_min: Array2<f64>,
        vp: Array2<f64>,
        ve: Option<Array2<f64>>,
    ) -> Result<Self> {
        if vp.dim() != ktrans_per_min.dim() {
            return Err(Error::Dimension("vp map does not match ktrans map".into()));
        }
        match (&ve, model) {
            (Some(ve), TkModel::ETofts) => {
                if ve.dim() != ktrans_per_min.dim() {
                    return Err(Error::Dimension("ve map does not match ktrans map".into()));
                }
                if ve.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::unit("ve", "fractions must lie in [0, 1]"));
                }
            }
            (None, TkModel::Patlak) => {}
            (Some(_), TkModel::Patlak) => {
                return Err(Error::Config("Patlak maps carry no ve".into()));
            }
            (None, TkModel::ETofts) => {
                return Err(Error::Config("extended Tofts maps require ve".into()));
            }
        }
        if ktrans_per_min.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::unit("ktrans", "rates must be finite and >= 0"));
        }
        if vp.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::unit("vp", "fractions must lie in [0, 1]"));
        }
        Ok(PkMap { model, ktrans_per_min, vp, ve })
    }

    pub fn zeros(model: TkModel, height: usize, width: usize) -> Self {
        let z = Array2::zeros((height, width));
        PkMap {
            model,
            ktrans_per_min: z.clone(),
            vp: z.clone(),
            ve: (model == TkModel::ETofts).then_some(z),
        }
    }

    /// Builds a map from a `(n_params, height, width)` stack in model order.
    pub fn from_stack(model: TkModel, stack: &Array3<f64>) -> Result<Self> {
        if stack.len_of(Axis(0)) != model.n_params() {
            return Err(Error::Dimension(format!(
                "{model} needs {} parameter planes, got {}",
                model.n_params(),
                stack.len_of(Axis(0))
            )));
        }
        let plane = |i: usize| stack.index_axis(Axis(0), i).to_owned();
        let ve = (model == TkModel::ETofts).then(|| plane(2));
        PkMap::new(model, plane(0), plane(1), ve)
    }

    pub fn to_stack(&self) -> Array3<f64> {
        let (h, w) = self.dim();
        let mut out = Array3::zeros((self.model.n_params(), h, w));
        for i in 0..self.model.n_params() {
            out.index_axis_mut(Axis(0), i).assign(self.param(i));
        }
        out
    }

    pub fn model(&self) -> TkModel {
        self.model
    }
    pub fn ktrans_per_min(&self) -> &Array2<f64> {
        &self.ktrans_per_min
    }
    pub fn vp(&self) -> &Array2<f64> {
        &self.vp
    }
    pub fn ve(&self) -> Option<&Array2<f64>> {
        self.ve.as_ref()
    }

    /// Parameter plane by model order index (0 = K^trans, 1 = v_p, 2 = v_e).
    pub fn param(&self, index: usize) -> &Array2<f64> {
        match index {
            0 => &self.ktrans_per_min,
            1 => &self.vp,
            2 => self.ve.as_ref().expect("parameter index out of range for model"),
            _ => panic!("parameter index {index} out of range"),
        }
    }

    /// (height, width)
    pub fn dim(&self) -> (usize, usize) {
        self.ktrans_per_min.dim()
    }

    pub fn voxel(&self, row: usize, col: usize) -> VoxelParams {
        VoxelParams {
            ktrans_per_min: self.ktrans_per_min[[row, col]],
            vp: self.vp[[row, col]],
            ve: self.ve.as_ref().map(|v| v[[row, col]]),
        }
    }
}

/// Per-voxel T1, pre-contrast signal S0 and the analysis mask.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxMaps {
    t1_seconds: Array2<f64>,
    s0: Array2<f64>,
    mask: Array2<bool>,
}

impl AuxMaps {
    pub fn new(t1_seconds: Array2<f64>, s0: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if t1_seconds.dim() != s0.dim() || s0.dim() != mask.dim() {
            return Err(Error::Dimension("T1, S0 and mask rasters differ in size".into()));
        }
        for ((&t1, &s0), &m) in t1_seconds.iter().zip(s0.iter()).zip(mask.iter()) {
            if m && !(t1.is_finite() && t1 > 0.0) {
                return Err(Error::unit("t1", "T1 must be > 0 inside the mask"));
            }
            if m && !(s0.is_finite() && s0 > 0.0) {
                return Err(Error::unit("s0", "S0 must be > 0 inside the mask"));
            }
        }
        Ok(AuxMaps { t1_seconds, s0, mask })
    }

    pub fn t1_seconds(&self) -> &Array2<f64> {
        &self.t1_seconds
    }
    pub fn s0(&self) -> &Array2<f64> {
        &self.s0
    }
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }
    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn with_mask(&self, mask: Array2<bool>) -> Result<Self> {
        AuxMaps::new(self.t1_seconds.clone(), self.s0.clone(), mask)
    }
}

/// Signal raster of shape `(n_frames, height, width)`; frame is the slowest axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DceSeries {
    data: Array3<f64>,
    acq: AcqParams,
}

impl DceSeries {
    pub fn new(data: Array3<f64>, acq: AcqParams) -> Result<Self> {
        if data.len_of(Axis(0)) != acq.n_frames() {
            return Err(Error::Dimension(format!(
                "series has {} frames but acquisition declares {}",
                data.len_of(Axis(0)),
                acq.n_frames()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalRange("series contains non-finite samples".into()));
        }
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().to_owned() };
        Ok(DceSeries { data, acq })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
    pub fn acq(&self) -> &AcqParams {
        &self.acq
    }
    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
    /// (height, width)
    pub fn dim(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
    pub fn voxel_curve(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![.., row, col])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_from_clinical_settings_is_accepted() {
        let acq = AcqParams::new(0.0028, 10f64.to_radians(), 3.47, 6.5, 65, 4).unwrap();
        assert_eq!(validate_units(acq).unwrap(), acq);
        assert_eq!(acq.time_grid()[64], 64.0 * 6.5);
    }

    #[test]
    fn unit_errors_name_the_field() {
        let base = AcqParams::tumor_protocol();
        let bad_tr = RawAcqParams { tr_seconds: 0.0, ..base.into() };
        match AcqParams::try_from(bad_tr) {
            Err(Error::Unit { field, .. }) => assert_eq!(field, "tr"),
            other => panic!("{other:?}"),
        }
        let bad_flip = RawAcqParams { flip_angle_radians: std::f64::consts::PI, ..base.into() };
        match AcqParams::try_from(bad_flip) {
            Err(Error::Unit { field, .. }) => assert_eq!(field, "flip_angle"),
            other => panic!("{other:?}"),
        }
        assert!(AcqParams::new(0.0028, 0.2, 3.47, 6.5, 1, 0).is_err());
        assert!(AcqParams::new(0.0028, 0.2, 3.47, 6.5, 5, 5).is_err());
        assert!(AcqParams::new(0.0028, 0.2, -1.0, 6.5, 5, 0).is_err());
    }

    #[test]
    fn acq_json_rejects_invalid_fields() {
        let json = serde_json::to_string(&AcqParams::tumor_protocol()).unwrap();
        let back: AcqParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, AcqParams::tumor_protocol());
        let bad = json.replace("\"n_frames\":65", "\"n_frames\":1");
        assert!(serde_json::from_str::<AcqParams>(&bad).is_err());
    }

    #[test]
    fn ktrans_unit_round_trip() {
        for k in [0.0, 0.013, 0.25, 1.0, 1e-7, 0.7319] {
            let back = per_s_to_per_min(per_min_to_per_s(k));
            assert!((back - k).abs() <= f64::EPSILON * k.abs());
        }
    }

    #[test]
    fn pk_map_invariants() {
        let z = Array2::<f64>::zeros((2, 3));
        assert!(PkMap::new(TkModel::Patlak, z.clone(), z.clone(), None).is_ok());
        assert!(PkMap::new(TkModel::ETofts, z.clone(), z.clone(), None).is_err());
        assert!(PkMap::new(TkModel::Patlak, z.clone(), z.clone(), Some(z.clone())).is_err());
        let neg = Array2::from_elem((2, 3), -0.1);
        assert!(PkMap::new(TkModel::Patlak, neg, z.clone(), None).is_err());
        let big = Array2::from_elem((2, 3), 1.5);
        assert!(PkMap::new(TkModel::ETofts, z.clone(), z.clone(), Some(big)).is_err());
        let odd = Array2::<f64>::zeros((3, 2));
        assert!(PkMap::new(TkModel::Patlak, z, odd, None).is_err());
    }

    #[test]
    fn pk_map_stack_round_trip() {
        let k = Array2::from_shape_fn((2, 2), |(i, j)| 0.01 * (i + j) as f64);
        let vp = Array2::from_elem((2, 2), 0.004);
        let ve = Array2::from_elem((2, 2), 0.04);
        let map = PkMap::new(TkModel::ETofts, k, vp, Some(ve)).unwrap();
        let back = PkMap::from_stack(TkModel::ETofts, &map.to_stack()).unwrap();
        assert_eq!(back, map);
        assert!(PkMap::from_stack(TkModel::Patlak, &map.to_stack()).is_err());
    }

    #[test]
    fn aux_maps_only_check_inside_mask() {
        let t1 = Array2::from_elem((2, 2), 0.0);
        let s0 = Array2::from_elem((2, 2), 100.0);
        let mask = Array2::from_elem((2, 2), false);
        assert!(AuxMaps::new(t1.clone(), s0.clone(), mask).is_ok());
        let mask = Array2::from_elem((2, 2), true);
        assert!(AuxMaps::new(t1, s0, mask).is_err());
    }

    #[test]
    fn plasma_curve_validation() {
        assert!(PlasmaCurve::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_ok());
        assert!(PlasmaCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(PlasmaCurve::new(vec![0.0, -1.0], vec![0.0, 1.0]).is_err());
        assert!(PlasmaCurve::new(vec![0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn series_frame_count_must_match() {
        let acq = AcqParams::new(0.0028, 0.2, 3.47, 6.5, 3, 0).unwrap();
        assert!(DceSeries::new(Array3::zeros((3, 2, 2)), acq).is_ok());
        assert!(DceSeries::new(Array3::zeros((4, 2, 2)), acq).is_err());
        let mut nan = Array3::zeros((3, 2, 2));
        nan[[0, 0, 0]] = f64::NAN;
        assert!(DceSeries::new(nan, acq).is_err());
    }
}
