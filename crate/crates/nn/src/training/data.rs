//! Training subjects, patch cropping and batch assembly.

use dcepk_core::phantom::Phantom;
use dcepk_core::physics::relative_enhancement;
use dcepk_core::{AcqParams, DceSeries, TkModel};
use ndarray::{Array2, Array3};
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{NnError, Result};
use crate::networks::{pk_scale_factors, CP_SCALE};

/// One training volume. Rasters share the same [H, W].
#[derive(Clone, Debug)]
pub struct Subject {
    /// Relative enhancement S/baseline − 1 [T, H, W], zero outside the mask.
    pub signal: Array3<f64>,
    pub t1_seconds: Array2<f64>,
    pub mask: Array2<bool>,
    /// Scaled PK maps [P, H, W], zero outside the mask.
    pub pk_scaled: Option<Array3<f64>>,
    /// Plasma curve in mM.
    pub cp_mm: Option<Vec<f64>>,
}

impl Subject {
    /// Network input for a DCE series: relative enhancement inside `mask`.
    pub fn from_series(series: &DceSeries, t1_seconds: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if t1_seconds.dim() != series.dim() || mask.dim() != series.dim() {
            return Err(NnError::Config("auxiliary rasters do not match the series".into()));
        }
        Ok(Subject { signal: relative_enhancement(series, &mask), t1_seconds, mask, pk_scaled: None, cp_mm: None })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }
}

/// Multiplies each parameter plane by its network scale.
pub fn scale_pk(stack: &Array3<f64>, model: TkModel) -> Array3<f64> {
    let scales = pk_scale_factors(model);
    let mut out = stack.clone();
    for (mut plane, s) in out.outer_iter_mut().zip(scales) {
        plane.mapv_inplace(|v| v * s);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub model: TkModel,
    pub acq: AcqParams,
    pub subjects: Vec<Subject>,
    /// Plasma curves (mM) the cycle draws from independently of the images.
    pub cp_pool: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(model: TkModel, acq: AcqParams, subjects: Vec<Subject>, cp_pool: Vec<Vec<f64>>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(NnError::DatasetTooSmall("no subjects".into()));
        }
        let t = acq.n_frames();
        for (i, s) in subjects.iter().enumerate() {
            let (h, w) = s.dim();
            let bad_pk = s.pk_scaled.as_ref().is_some_and(|p| p.dim() != (model.n_params(), h, w));
            let bad_cp = s.cp_mm.as_ref().is_some_and(|c| c.len() != t);
            if s.signal.dim() != (t, h, w) || s.t1_seconds.dim() != (h, w) || bad_pk || bad_cp {
                return Err(NnError::Config(format!("subject {i} has inconsistent rasters")));
            }
        }
        if cp_pool.iter().any(|c| c.len() != t) {
            return Err(NnError::Config(format!("plasma pool curves must have {t} samples")));
        }
        Ok(Dataset { model, acq, subjects, cp_pool })
    }

    /// Subjects with labels, plus every phantom's plasma curve in the pool.
    pub fn from_phantoms(phantoms: &[Phantom]) -> Result<Self> {
        let first = phantoms.first().ok_or_else(|| NnError::DatasetTooSmall("no phantoms".into()))?;
        let (model, acq) = (first.pk.model(), *first.series.acq());
        let mut subjects = Vec::with_capacity(phantoms.len());
        for p in phantoms {
            if p.pk.model() != model || *p.series.acq() != acq {
                return Err(NnError::Config("phantoms differ in model or protocol".into()));
            }
            let mask = p.aux.mask().clone();
            let mut subject = Subject::from_series(&p.series, p.aux.t1_seconds().clone(), mask.clone())?;
            let mut pk = scale_pk(&p.pk.to_stack(), model);
            for mut plane in pk.outer_iter_mut() {
                plane.zip_mut_with(&mask, |v, &m| *v = if m { *v } else { 0.0 });
            }
            subject.pk_scaled = Some(pk);
            subject.cp_mm = Some(p.cp.values_mm().to_vec());
            subjects.push(subject);
        }
        let cp_pool = phantoms.iter().map(|p| p.cp.values_mm().to_vec()).collect();
        Dataset::new(model, acq, subjects, cp_pool)
    }

    pub fn n_frames(&self) -> usize {
        self.acq.n_frames()
    }

    pub fn has_labels(&self) -> bool {
        self.subjects.iter().all(|s| s.pk_scaled.is_some() && s.cp_mm.is_some())
    }

    fn check_patch(&self, patch: usize) -> Result<()> {
        for (i, s) in self.subjects.iter().enumerate() {
            let (h, w) = s.dim();
            if h < patch || w < patch {
                return Err(NnError::DatasetTooSmall(format!("subject {i} is {h}x{w}, patch is {patch}")));
            }
        }
        Ok(())
    }
}

/// Location and orientation of one crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub subject: usize,
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub flip_rows: bool,
    pub flip_cols: bool,
}

impl Crop {
    /// Crop origin drawn uniformly among positions whose centre lies inside
    /// the mask, or among all positions if none does.
    pub fn draw<R: Rng>(dataset: &Dataset, size: usize, rng: &mut R) -> Crop {
        let subject = rng.random_range(0..dataset.subjects.len());
        let s = &dataset.subjects[subject];
        let (h, w) = s.dim();
        let half = size / 2;
        let candidates: Vec<(usize, usize)> = (0..=h - size)
            .flat_map(|t| (0..=w - size).map(move |l| (t, l)))
            .filter(|&(t, l)| s.mask[[t + half, l + half]])
            .collect();
        let (top, left) = if candidates.is_empty() {
            (rng.random_range(0..=h - size), rng.random_range(0..=w - size))
        } else {
            candidates[rng.random_range(0..candidates.len())]
        };
        Crop { subject, top, left, size, flip_rows: rng.random_bool(0.5), flip_cols: rng.random_bool(0.5) }
    }

    /// Source (row, col) of patch pixel (r, c).
    fn source(&self, r: usize, c: usize) -> (usize, usize) {
        let r = if self.flip_rows { self.size - 1 - r } else { r };
        let c = if self.flip_cols { self.size - 1 - c } else { c };
        (self.top + r, self.left + c)
    }

    fn copy_plane(&self, plane: impl Fn(usize, usize) -> f64, out: &mut [f64]) {
        for r in 0..self.size {
            for c in 0..self.size {
                let (y, x) = self.source(r, c);
                out[r * self.size + c] = plane(y, x);
            }
        }
    }

    fn copy_stack(&self, stack: &Array3<f64>, out: &mut [f64]) {
        let n = self.size * self.size;
        for (k, chunk) in out.chunks_mut(n).enumerate().take(stack.dim().0) {
            self.copy_plane(|y, x| stack[[k, y, x]], chunk);
        }
    }
}

/// Image-side samples: network input with the rasters the forward model needs.
#[derive(Clone, Debug)]
pub struct ImagePatches {
    /// [B, T, p, p]
    pub signal: Tensor,
    /// [B, p, p]
    pub t1_seconds: Tensor,
    /// [B, p, p], 1 inside the mask.
    pub mask: Tensor,
}

/// Parameter-side samples with their own auxiliary rasters.
#[derive(Clone, Debug)]
pub struct PkPatches {
    /// Scaled [B, P, p, p]
    pub pk: Tensor,
    pub t1_seconds: Tensor,
    pub mask: Tensor,
}

/// Signals, PK maps and plasma curves drawn independently of each other.
#[derive(Clone, Debug)]
pub struct UnpairedBatch {
    pub s: ImagePatches,
    pub p: PkPatches,
    /// Scaled plasma curves [B, T].
    pub cp: Tensor,
}

/// Signal patches with their own labels and plasma curves.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pub s: ImagePatches,
    pub pk: Tensor,
    pub cp: Tensor,
}

struct Rasters {
    signal: Vec<f64>,
    pk: Vec<f64>,
    t1: Vec<f64>,
    mask: Vec<f64>,
    cp: Vec<f64>,
}

fn gather(dataset: &Dataset, crops: &[Crop], with_signal: bool, with_pk: bool) -> Result<Rasters> {
    let n = crops.first().map_or(0, |c| c.size * c.size);
    let (t, p) = (dataset.n_frames(), dataset.model.n_params());
    let b = crops.len();
    let mut out = Rasters {
        signal: vec![0.0; if with_signal { b * t * n } else { 0 }],
        pk: vec![0.0; if with_pk { b * p * n } else { 0 }],
        t1: vec![0.0; b * n],
        mask: vec![0.0; b * n],
        cp: vec![0.0; b * t],
    };
    for (i, crop) in crops.iter().enumerate() {
        let s = &dataset.subjects[crop.subject];
        if with_signal {
            crop.copy_stack(&s.signal, &mut out.signal[i * t * n..(i + 1) * t * n]);
        }
        if with_pk {
            let pk = s.pk_scaled.as_ref().ok_or_else(|| NnError::Config(format!("subject {} has no PK labels", crop.subject)))?;
            crop.copy_stack(pk, &mut out.pk[i * p * n..(i + 1) * p * n]);
        }
        crop.copy_plane(|y, x| s.t1_seconds[[y, x]], &mut out.t1[i * n..(i + 1) * n]);
        crop.copy_plane(|y, x| f64::from(u8::from(s.mask[[y, x]])), &mut out.mask[i * n..(i + 1) * n]);
        if let Some(cp) = &s.cp_mm {
            for (dst, v) in out.cp[i * t..(i + 1) * t].iter_mut().zip(cp) {
                *dst = v * CP_SCALE;
            }
        }
    }
    Ok(out)
}

fn image_patches(r: &mut Rasters, b: usize, t: usize, size: usize) -> Result<ImagePatches> {
    Ok(ImagePatches {
        signal: Tensor::new(vec![b, t, size, size], std::mem::take(&mut r.signal))?,
        t1_seconds: Tensor::new(vec![b, size, size], std::mem::take(&mut r.t1))?,
        mask: Tensor::new(vec![b, size, size], std::mem::take(&mut r.mask))?,
    })
}

/// Draws `batch` signal crops, `batch` independent PK crops and `batch`
/// plasma curves from the pool.
pub fn sample_unpaired<R: Rng>(dataset: &Dataset, batch: usize, patch: usize, rng: &mut R) -> Result<UnpairedBatch> {
    dataset.check_patch(patch)?;
    if dataset.cp_pool.is_empty() {
        return Err(NnError::DatasetTooSmall("plasma curve pool is empty".into()));
    }
    let (t, p) = (dataset.n_frames(), dataset.model.n_params());
    let s_crops: Vec<Crop> = (0..batch).map(|_| Crop::draw(dataset, patch, rng)).collect();
    let p_crops: Vec<Crop> = (0..batch).map(|_| Crop::draw(dataset, patch, rng)).collect();
    let mut cp = Vec::with_capacity(batch * t);
    for _ in 0..batch {
        let curve = &dataset.cp_pool[rng.random_range(0..dataset.cp_pool.len())];
        cp.extend(curve.iter().map(|v| v * CP_SCALE));
    }
    let mut s = gather(dataset, &s_crops, true, false)?;
    let pk = gather(dataset, &p_crops, false, true)?;
    Ok(UnpairedBatch {
        s: image_patches(&mut s, batch, t, patch)?,
        p: PkPatches {
            pk: Tensor::new(vec![batch, p, patch, patch], pk.pk)?,
            t1_seconds: Tensor::new(vec![batch, patch, patch], pk.t1)?,
            mask: Tensor::new(vec![batch, patch, patch], pk.mask)?,
        },
        cp: Tensor::new(vec![batch, t], cp)?,
    })
}

/// Draws `batch` crops with the PK labels and plasma curve of the same subject.
pub fn sample_paired<R: Rng>(dataset: &Dataset, batch: usize, patch: usize, rng: &mut R) -> Result<PairedBatch> {
    dataset.check_patch(patch)?;
    if !dataset.has_labels() {
        return Err(NnError::Config("supervised training needs PK labels and plasma curves".into()));
    }
    let (t, p) = (dataset.n_frames(), dataset.model.n_params());
    let crops: Vec<Crop> = (0..batch).map(|_| Crop::draw(dataset, patch, rng)).collect();
    let mut r = gather(dataset, &crops, true, true)?;
    let pk = Tensor::new(vec![batch, p, patch, patch], std::mem::take(&mut r.pk))?;
    let cp = Tensor::new(vec![batch, t], std::mem::take(&mut r.cp))?;
    Ok(PairedBatch { s: image_patches(&mut r, batch, t, patch)?, pk, cp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcepk_core::phantom::{generate_phantom, PhantomConfig};
    use rand::SeedableRng;

    fn small_dataset() -> Dataset {
        let mut cfg = PhantomConfig::tumor_like(3);
        cfg.acq = cfg.acq.with_n_frames(12).unwrap();
        Dataset::from_phantoms(&[generate_phantom(&cfg).unwrap()]).unwrap()
    }

    #[test]
    fn etofts_scaling_example() {
        let stack = Array3::from_shape_vec((3, 1, 1), vec![0.013, 0.00454, 0.042]).unwrap();
        let scaled = scale_pk(&stack, TkModel::ETofts);
        for (got, want) in scaled.iter().zip([0.26, 0.1816, 0.168]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn flips_permute_pixels() {
        let d = small_dataset();
        let crop = Crop { subject: 0, top: 2, left: 5, size: 4, flip_rows: true, flip_cols: false };
        assert_eq!(crop.source(0, 0), (5, 5));
        assert_eq!(crop.source(3, 3), (2, 8));
        let mut out = vec![0.0; 16];
        crop.copy_plane(|y, x| d.subjects[0].t1_seconds[[y, x]], &mut out);
        assert_eq!(out[0], d.subjects[0].t1_seconds[[5, 5]]);
    }

    #[test]
    fn paired_batch_keeps_labels_aligned() {
        let d = small_dataset();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = sample_paired(&d, 3, 20, &mut rng).unwrap();
        assert_eq!(b.s.signal.shape(), &[3, 12, 20, 20]);
        assert_eq!(b.pk.shape(), &[3, 3, 20, 20]);
        // Outside the mask both the signal and labels are zero.
        for i in 0..3 * 400 {
            if b.s.mask.data()[i] == 0.0 {
                let (bi, px) = (i / 400, i % 400);
                assert_eq!(b.pk.data()[bi * 1200 + px], 0.0);
                assert_eq!(b.s.signal.data()[bi * 12 * 400 + 5 * 400 + px], 0.0);
            }
        }
    }

    #[test]
    fn patch_larger_than_image_is_rejected() {
        let d = small_dataset();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_unpaired(&d, 1, 65, &mut rng), Err(NnError::DatasetTooSmall(_))));
    }
}
