//! Digital phantom: synthetic PK maps pushed through the forward operator.
//!
//! A large "tissue" ellipse defines the mask; smaller lesion ellipses are
//! painted on top. Each region draws its parameters, T1 and S0 uniformly
//! from the configured ranges, and parameters carry a low-amplitude linear
//! ramp so the maps are not piecewise constant.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aif::{blood_to_plasma, population_aif, AifParams};
use crate::error::{Error, Result};
use crate::fitting::ParamBounds;
use crate::physics::forward_operator;
use crate::types::{AcqParams, AuxMaps, DceSeries, PkMap, PlasmaCurve, TkModel, DEFAULT_HEMATOCRIT};

/// Parameter draw ranges, K^trans in min⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub ktrans_per_min: (f64, f64),
    pub vp: (f64, f64),
    pub ve: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub model: TkModel,
    pub n_regions: usize,
    pub parameter_ranges: ParamRanges,
    pub t1_range_seconds: (f64, f64),
    pub s0_range: (f64, f64),
    pub acq: AcqParams,
    pub aif: AifParams,
    pub hct: f64,
    /// Noise standard deviation as a fraction of the mean masked S0.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Relative amplitude of the per-region parameter ramp.
    #[serde(default = "default_ramp")]
    pub ramp_amplitude: f64,
    /// Uniform relative jitter applied to AIF amplitude and timescale.
    #[serde(default)]
    pub aif_jitter: f64,
}

fn default_ramp() -> f64 {
    0.1
}

impl PhantomConfig {
    /// 64×64 extended Tofts phantom with tumour-like lesions.
    pub fn tumor_like(seed: u64) -> Self {
        PhantomConfig {
            width: 64,
            height: 64,
            model: TkModel::ETofts,
            n_regions: 4,
            parameter_ranges: ParamRanges {
                ktrans_per_min: (0.010, 0.016),
                vp: (0.0035, 0.0055),
                ve: (0.034, 0.050),
            },
            t1_range_seconds: (1.2, 1.6),
            s0_range: (800.0, 1200.0),
            acq: AcqParams::tumor_protocol(),
            aif: AifParams::default(),
            hct: DEFAULT_HEMATOCRIT,
            noise_sigma: 0.0,
            seed,
            ramp_amplitude: 0.1,
            aif_jitter: 0.0,
        }
    }

    /// 64×64 Patlak phantom with low-leakage parameters (60 frames, 10 s).
    pub fn low_leakage(seed: u64) -> Self {
        let acq = AcqParams::new(0.00372, 10f64.to_radians(), crate::types::GADOBUTROL_R1, 10.0, 60, 4)
            .expect("constant protocol is valid");
        PhantomConfig {
            model: TkModel::Patlak,
            parameter_ranges: ParamRanges {
                ktrans_per_min: (0.00025, 0.00045),
                vp: (0.012, 0.024),
                ve: (0.0, 0.0),
            },
            acq,
            aif: AifParams::default().with_arrival(40.0).expect("valid arrival"),
            ..PhantomConfig::tumor_like(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.width < 8 || self.height < 8 {
            return cfg_err(format!("phantom must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if self.n_regions == 0 {
            return cfg_err("n_regions must be positive".into());
        }
        let bounds = ParamBounds::default();
        let grow = 1.0 + self.ramp_amplitude;
        let shrink = 1.0 - self.ramp_amplitude;
        if !(0.0..1.0).contains(&self.ramp_amplitude) {
            return cfg_err("ramp_amplitude must lie in [0, 1)".into());
        }
        let mut ranges = vec![
            ("ktrans", self.parameter_ranges.ktrans_per_min, bounds.ktrans_per_min),
            ("vp", self.parameter_ranges.vp, bounds.vp),
        ];
        if self.model == TkModel::ETofts {
            ranges.push(("ve", self.parameter_ranges.ve, bounds.ve));
        }
        for (name, (lo, hi), (blo, bhi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return cfg_err(format!("range for {name} must satisfy lo <= hi"));
            }
            if lo * shrink < blo || hi * grow > bhi {
                return cfg_err(format!(
                    "range for {name} [{lo}, {hi}] with a {} ramp leaves the fitting bounds [{blo}, {bhi}]",
                    self.ramp_amplitude
                ));
            }
        }
        for (name, (lo, hi)) in [("t1_range_seconds", self.t1_range_seconds), ("s0_range", self.s0_range)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return cfg_err(format!("{name} must be a positive interval"));
            }
        }
        if !(0.0..1.0).contains(&self.hct) {
            return cfg_err(format!("hct must lie in [0, 1), got {}", self.hct));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return cfg_err("noise_sigma must be >= 0".into());
        }
        if !(0.0..0.5).contains(&self.aif_jitter) {
            return cfg_err("aif_jitter must lie in [0, 0.5)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub pk: PkMap,
    pub aux: AuxMaps,
    pub cp: PlasmaCurve,
    pub series: DceSeries,
    /// 0 outside the mask, 1 for the tissue background, 2.. for lesions.
    pub labels: Array2<i32>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalised radius; ≤ 1 inside.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

struct Region {
    shape: Ellipse,
    base: [f64; 3],
    ramp_dir: f64,
    t1: f64,
    s0: f64,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..=hi) } else { lo }
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);

    let body = Ellipse { cy: (hf - 1.0) / 2.0, cx: (wf - 1.0) / 2.0, ry: 0.44 * hf, rx: 0.40 * wf, angle: 0.0 };
    let mut regions = Vec::with_capacity(cfg.n_regions);
    let r = &cfg.parameter_ranges;
    for i in 0..cfg.n_regions {
        let shape = if i == 0 {
            body
        } else {
            let size = hf.min(wf);
            let ry = rng.random_range(0.07..0.14) * size;
            let rx = rng.random_range(0.07..0.14) * size;
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            // Keep lesion centres well inside the tissue ellipse.
            let (cy, cx) = loop {
                let cy = rng.random_range(0.0..hf);
                let cx = rng.random_range(0.0..wf);
                if body.radius(cy, cx) < 0.6 {
                    break (cy, cx);
                }
            };
            Ellipse { cy, cx, ry, rx, angle }
        };
        let base = [uniform(&mut rng, r.ktrans_per_min), uniform(&mut rng, r.vp), uniform(&mut rng, r.ve)];
        let ramp_dir = rng.random_range(0.0..std::f64::consts::TAU);
        let t1 = uniform(&mut rng, cfg.t1_range_seconds);
        let s0 = uniform(&mut rng, cfg.s0_range);
        regions.push(Region { shape, base, ramp_dir, t1, s0 });
    }

    let mut labels = Array2::<i32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            for (i, reg) in regions.iter().enumerate().rev() {
                if reg.shape.radius(y as f64, x as f64) <= 1.0 {
                    labels[[y, x]] = i as i32 + 1;
                    break;
                }
            }
        }
    }
    // Lesions are painted inside the body, so the body ellipse is the mask.
    let mask = labels.mapv(|l| l > 0);

    let n_params = cfg.model.n_params();
    let mut stack = Array3::<f64>::zeros((n_params, h, w));
    let mut t1 = Array2::from_elem((h, w), cfg.t1_range_seconds.0);
    let mut s0 = Array2::from_elem((h, w), cfg.s0_range.0);
    for y in 0..h {
        for x in 0..w {
            let l = labels[[y, x]];
            if l == 0 {
                continue;
            }
            let reg = &regions[l as usize - 1];
            let (sin, cos) = reg.ramp_dir.sin_cos();
            let extent = reg.shape.rx.max(reg.shape.ry);
            let proj = ((x as f64 - reg.shape.cx) * cos + (y as f64 - reg.shape.cy) * sin) / extent;
            let factor = 1.0 + cfg.ramp_amplitude * proj.clamp(-1.0, 1.0);
            for p in 0..n_params {
                stack[[p, y, x]] = reg.base[p] * factor;
            }
            t1[[y, x]] = reg.t1;
            s0[[y, x]] = reg.s0;
        }
    }
    let pk = PkMap::from_stack(cfg.model, &stack)?;
    let aux = AuxMaps::new(t1, s0, mask)?;

    let mut aif = cfg.aif.with_arrival(cfg.acq.bolus_arrival_seconds())?;
    if cfg.aif_jitter > 0.0 {
        let amp = 1.0 + rng.random_range(-cfg.aif_jitter..=cfg.aif_jitter);
        let time = 1.0 + rng.random_range(-cfg.aif_jitter..=cfg.aif_jitter);
        aif = aif.scaled(amp, time)?;
    }
    let cb = population_aif(&aif, &cfg.acq.time_grid())?;
    let cp = blood_to_plasma(&cb, cfg.hct)?;

    let clean = forward_operator(&pk, &cp, &aux, &cfg.acq)?;
    let series = if cfg.noise_sigma > 0.0 {
        let masked: Vec<f64> =
            aux.s0().iter().zip(aux.mask()).filter(|(_, &m)| m).map(|(s, _)| *s).collect();
        let mean_s0 = masked.iter().sum::<f64>() / masked.len().max(1) as f64;
        add_noise(&clean, cfg.noise_sigma * mean_s0, noise_seed(cfg.seed))?
    } else {
        clean
    };
    Ok(Phantom { pk, aux, cp, series, labels })
}

fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Adds i.i.d. N(0, sigma²) to every sample and clamps at zero. `sigma = 0`
/// returns the input unchanged.
pub fn add_noise(series: &DceSeries, sigma: f64, seed: u64) -> Result<DceSeries> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(series.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = series.data().mapv(|v| (v + normal.sample(&mut rng)).max(0.0));
    DceSeries::new(data, *series.acq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_volume, FitConfig, FitMethod};

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = PhantomConfig { noise_sigma: 0.01, ..PhantomConfig::tumor_like(7) };
        let a = generate_phantom(&cfg).unwrap();
        let b = generate_phantom(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.pk, c.pk);
    }

    #[test]
    fn parameters_stay_inside_fitting_bounds() {
        for seed in 0..5 {
            let p = generate_phantom(&PhantomConfig::tumor_like(seed)).unwrap();
            let bounds = ParamBounds::default();
            let (h, w) = p.pk.dim();
            for y in 0..h {
                for x in 0..w {
                    let v = p.pk.voxel(y, x);
                    if p.aux.mask()[[y, x]] {
                        assert!(bounds.contains(&v));
                        assert!(v.ktrans_per_min > 0.0);
                    } else {
                        assert_eq!(v.ktrans_per_min, 0.0);
                    }
                }
            }
            // Border row is outside the mask.
            assert!(p.aux.mask().row(0).iter().all(|m| !m));
        }
    }

    #[test]
    fn lesions_have_table_magnitudes() {
        let p = generate_phantom(&PhantomConfig::tumor_like(3)).unwrap();
        for label in 2..=4 {
            let vals: Vec<VoxelVals> = collect(&p, label);
            assert!(!vals.is_empty());
            let mean = |f: fn(&VoxelVals) -> f64| vals.iter().map(f).sum::<f64>() / vals.len() as f64;
            assert!((0.009..=0.0176).contains(&mean(|v| v.0)));
            assert!((0.0031..=0.0061).contains(&mean(|v| v.1)));
            assert!((0.030..=0.055).contains(&mean(|v| v.2)));
        }
    }

    type VoxelVals = (f64, f64, f64);
    fn collect(p: &Phantom, label: i32) -> Vec<VoxelVals> {
        let (h, w) = p.pk.dim();
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if p.labels[[y, x]] == label {
                    let v = p.pk.voxel(y, x);
                    out.push((v.ktrans_per_min, v.vp, v.ve.unwrap()));
                }
            }
        }
        out
    }

    #[test]
    fn noiseless_phantom_is_recovered_by_lls() {
        let cfg = PhantomConfig { width: 24, height: 24, ..PhantomConfig::low_leakage(11) };
        let p = generate_phantom(&cfg).unwrap();
        let fit = fit_volume(&p.series, &p.cp, &p.aux, &FitConfig::new(FitMethod::Lls, TkModel::Patlak)).unwrap();
        assert_eq!(fit.n_failed, 0);
        let (h, w) = p.pk.dim();
        for y in 0..h {
            for x in 0..w {
                if !p.aux.mask()[[y, x]] {
                    continue;
                }
                for i in 0..2 {
                    let (a, b) = (fit.map.param(i)[[y, x]], p.pk.param(i)[[y, x]]);
                    assert!(((a - b) / b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn infeasible_ranges_are_config_errors() {
        let mut cfg = PhantomConfig::tumor_like(0);
        cfg.parameter_ranges.vp = (0.5, 0.95);
        assert!(matches!(generate_phantom(&cfg), Err(Error::Config(_))));
        let mut cfg = PhantomConfig::tumor_like(0);
        cfg.parameter_ranges.ktrans_per_min = (0.02, 0.01);
        assert!(matches!(generate_phantom(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let p = generate_phantom(&PhantomConfig::tumor_like(1)).unwrap();
        assert_eq!(add_noise(&p.series, 0.0, 5).unwrap(), p.series);
        let a = add_noise(&p.series, 2.0, 5).unwrap();
        let b = add_noise(&p.series, 2.0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p.series);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = PhantomConfig::tumor_like(99);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PhantomConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
