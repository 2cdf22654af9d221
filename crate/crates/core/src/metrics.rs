//! PSNR, SSIM and per-region statistics for parameter maps.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PkMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same_dim(a: &Array2<f64>, b: &Array2<f64>, mask: Option<&Array2<bool>>) -> Result<()> {
    if a.dim() != b.dim() || mask.is_some_and(|m| m.dim() != a.dim()) {
        return Err(Error::Dimension("prediction, reference and mask must share dimensions".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the masked voxels. Returns
/// `f64::INFINITY` when the images agree exactly.
pub fn psnr(pred: &Array2<f64>, reference: &Array2<f64>, data_range: f64, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_same_dim(pred, reference, mask)?;
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be > 0, got {data_range}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, (&p, &r)) in pred.iter().zip(reference.iter()).enumerate() {
        let (y, x) = (idx / pred.ncols(), idx % pred.ncols());
        if mask.is_none_or(|m| m[[y, x]]) {
            sum += (p - r) * (p - r);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filter: output (h − 10) × (w − 10).
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..n).map(|i| k[i] * img[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..n).map(|i| k[i] * rows[[y + i, x]]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// K1 = 0.01, K2 = 0.03 and population (biased) local statistics. The mean is
/// taken over window centres that lie fully inside the image and, when a mask
/// is given, inside the mask.
pub fn ssim(pred: &Array2<f64>, reference: &Array2<f64>, data_range: f64, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_same_dim(pred, reference, mask)?;
    let (h, w) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { height: h, width: w, window: SSIM_WINDOW });
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be > 0, got {data_range}")));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mu_x = filter_valid(pred, &k);
    let mu_y = filter_valid(reference, &k);
    let xx = filter_valid(&(pred * pred), &k);
    let yy = filter_valid(&(reference * reference), &k);
    let xy = filter_valid(&(pred * reference), &k);

    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut n = 0usize;
    Zip::indexed(&mu_x).and(&mu_y).and(&xx).and(&yy).and(&xy).for_each(|(y, x), &mx, &my, &sxx, &syy, &sxy| {
        if mask.is_some_and(|m| !m[[y + half, x + half]]) {
            return;
        }
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += s;
        n += 1;
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / n as f64)
}

/// Integer label raster plus the region ids of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSpec {
    labels: Array2<i32>,
    region_ids: Vec<i32>,
}

impl RegionSpec {
    pub fn new(labels: Array2<i32>, region_ids: Vec<i32>) -> Result<Self> {
        for id in &region_ids {
            if !labels.iter().any(|l| l == id) {
                return Err(Error::EmptyRegion(*id));
            }
        }
        Ok(RegionSpec { labels, region_ids })
    }

    /// Every positive label present in the raster.
    pub fn all_positive(labels: Array2<i32>) -> Self {
        let mut ids: Vec<i32> = labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        RegionSpec { labels, region_ids: ids }
    }

    pub fn labels(&self) -> &Array2<i32> {
        &self.labels
    }
    pub fn region_ids(&self) -> &[i32] {
        &self.region_ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMean {
    pub region_id: i32,
    pub n_voxels: usize,
    /// Parameter name → mean (K^trans in min⁻¹).
    pub means: BTreeMap<String, f64>,
}

pub fn region_stats(map: &PkMap, regions: &RegionSpec) -> Result<Vec<RegionMean>> {
    if regions.labels.dim() != map.dim() {
        return Err(Error::Dimension("label raster does not match the PK map".into()));
    }
    let names = map.model().param_names();
    regions
        .region_ids
        .iter()
        .map(|&id| {
            let mut sums = vec![0.0; names.len()];
            let mut n = 0usize;
            for ((y, x), &l) in regions.labels.indexed_iter() {
                if l == id {
                    n += 1;
                    for (i, s) in sums.iter_mut().enumerate() {
                        *s += map.param(i)[[y, x]];
                    }
                }
            }
            if n == 0 {
                return Err(Error::EmptyRegion(id));
            }
            let means = names.iter().zip(&sums).map(|(name, s)| (name.to_string(), s / n as f64)).collect();
            Ok(RegionMean { region_id: id, n_voxels: n, means })
        })
        .collect()
}

/// Reference maximum over the mask, the data range convention for PK maps.
pub fn masked_max(reference: &Array2<f64>, mask: Option<&Array2<bool>>) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for ((y, x), &v) in reference.indexed_iter() {
        if mask.is_none_or(|m| m[[y, x]]) {
            max = max.max(v);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMask);
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TkModel;

    fn pseudo_random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        // Fixed LCG so values match the offline reference computation.
        let mut state = seed;
        Array2::from_shape_fn((h, w), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        })
    }

    #[test]
    fn psnr_identity_and_known_mse() {
        let a = Array2::from_elem((4, 4), 0.5);
        assert_eq!(psnr(&a, &a, 1.0, None).unwrap(), f64::INFINITY);
        // Every voxel off by range/10 → MSE = (range/10)² → 20 dB.
        let b = &a + 0.2;
        assert!((psnr(&b, &a, 2.0, None).unwrap() - 20.0).abs() < 1e-12);
        let none = Array2::from_elem((4, 4), false);
        assert_eq!(psnr(&a, &b, 1.0, Some(&none)), Err(Error::EmptyMask));
    }

    #[test]
    fn psnr_matches_reference_script() {
        let a = pseudo_random(16, 16, 1);
        let b = pseudo_random(16, 16, 2);
        // numpy: 10*log10(1/mean((a-b)**2)) for the same LCG streams.
        let v = psnr(&a, &b, 1.0, None).unwrap();
        assert!((v - PSNR_REFERENCE).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = pseudo_random(20, 20, 3);
        assert!((ssim(&a, &a, 1.0, None).unwrap() - 1.0).abs() < 1e-12);
        let (c1v, c2v) = (0.3, 0.7);
        let x = Array2::from_elem((16, 16), c1v);
        let y = Array2::from_elem((16, 16), c2v);
        let c1 = (0.01f64).powi(2);
        let expected = (2.0 * c1v * c2v + c1) / (c1v * c1v + c2v * c2v + c1);
        assert!((ssim(&x, &y, 1.0, None).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            ssim(&Array2::zeros((8, 20)), &Array2::zeros((8, 20)), 1.0, None),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn ssim_matches_reference_script() {
        let a = pseudo_random(24, 24, 4);
        let b = &a * 0.8 + &pseudo_random(24, 24, 5) * 0.2;
        let v = ssim(&a, &b, 1.0, None).unwrap();
        assert!((v - SSIM_REFERENCE).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = pseudo_random(20, 20, 6);
        let b = pseudo_random(20, 20, 7);
        let mask = Array2::from_shape_fn((20, 20), |(y, x)| (y + x) % 3 != 0);
        let ab = ssim(&a, &b, 1.0, Some(&mask)).unwrap();
        let ba = ssim(&b, &a, 1.0, Some(&mask)).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn psnr_affine_invariance() {
        let a = pseudo_random(10, 10, 8);
        let b = pseudo_random(10, 10, 9);
        let p = psnr(&a, &b, 1.0, None).unwrap();
        let q = psnr(&(&a * 3.0 + 5.0), &(&b * 3.0 + 5.0), 3.0, None).unwrap();
        assert!((p - q).abs() < 1e-10);
    }

    #[test]
    fn region_means() {
        let mut labels = Array2::zeros((4, 4));
        labels.slice_mut(ndarray::s![0..2, ..]).fill(1);
        labels.slice_mut(ndarray::s![2..4, ..]).fill(2);
        let k = Array2::from_shape_fn((4, 4), |(y, _)| if y < 2 { 0.01 } else { 0.03 });
        let vp = Array2::from_elem((4, 4), 0.005);
        let map = PkMap::new(TkModel::Patlak, k, vp, None).unwrap();
        let stats = region_stats(&map, &RegionSpec::new(labels.clone(), vec![1, 2]).unwrap()).unwrap();
        assert!((stats[0].means["ktrans"] - 0.01).abs() < 1e-15);
        assert!((stats[1].means["ktrans"] - 0.03).abs() < 1e-15);
        assert!((stats[0].means["vp"] - 0.005).abs() < 1e-15);

        let swapped = labels.mapv(|l| 3 - l);
        let s2 = region_stats(&map, &RegionSpec::new(swapped, vec![2, 1]).unwrap()).unwrap();
        assert_eq!(s2[0].means, stats[0].means);
        assert_eq!(s2[1].means, stats[1].means);
        assert_eq!(RegionSpec::new(labels, vec![5]), Err(Error::EmptyRegion(5)));
    }

    const PSNR_REFERENCE: f64 = 7.5828810528417865;
    const SSIM_REFERENCE: f64 = 0.9485655750445058;
}
