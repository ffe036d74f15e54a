//! Per-map accuracy, render-space distance and the artifact detector.

mod artifact;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use artifact::{
    detect_artifacts, ArtifactReport, ArtifactThresholds, MapScores, MapThresholds, DEFAULT_MI_BINS,
};

use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack, NormalMap};
use crate::render::{cosine_weight, ggx_specular, RenderSet};

fn check_same(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean absolute error over all stored values.
pub fn map_l1(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Mean angle between corresponding normals, in degrees.
pub fn angular_error(a: &NormalMap, b: &NormalMap) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "normals {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = a.vectors().len().max(1) as f64;
    let sum: f64 = a
        .vectors()
        .iter()
        .zip(b.vectors())
        .map(|(u, v)| u.cross(*v).norm().atan2(u.dot(*v)))
        .sum();
    Ok((sum / n).to_degrees())
}

/// Pearson correlation of two equally long samples.
pub fn pearson_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::NotEnoughSamples { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    // Offsets from the first element keep constant inputs at exactly zero variance.
    let (a0, b0) = (a[0], b[0]);
    let ma = a.iter().map(|x| x - a0).sum::<f64>() / n;
    let mb = b.iter().map(|y| y - b0).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - a0 - ma, y - b0 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::UndefinedCorrelation("first input"));
    }
    if sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("second input"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation over flattened pixels.
pub fn pearson(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_same(a, b)?;
    pearson_slices(a.data(), b.data())
}

/// Render-space distance between two stacks under a constant albedo `k`.
///
/// Per pixel: `sqrt(mean_S cbrt(cos^2(theta_l) * (f_gt - f_est)^2))`.
/// Returns the pixel mean and the per-pixel map.
pub fn brdf_distance(gt: &MapStack, est: &MapStack, s: &RenderSet, k: &ImageGrid) -> Result<(f64, ImageGrid)> {
    gt.check_size(est.width(), est.height(), "estimate")?;
    gt.check_size(k.width(), k.height(), "albedo")?;
    if k.channels() != 1 {
        return Err(Error::DimensionMismatch("albedo must be single-channel".into()));
    }
    if s.is_empty() {
        return Err(Error::EmptyRenderSet);
    }
    let w = gt.width();
    let inv_pi = std::f64::consts::FRAC_1_PI;
    let count = s.len() as f64;
    let mut out = vec![0.0; gt.pixel_count()];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let albedo = k.data()[i] * inv_pi;
            let (n_gt, n_est) = (gt.normals.vectors()[i], est.normals.vectors()[i]);
            let (s_gt, r_gt) = (gt.specular.data()[i], gt.roughness.data()[i]);
            let (s_est, r_est) = (est.specular.data()[i], est.roughness.data()[i]);
            let mut acc = 0.0;
            for p in s.pairs() {
                let f_gt = albedo + ggx_specular(n_gt, s_gt, r_gt, p.light, p.view);
                let f_est = albedo + ggx_specular(n_est, s_est, r_est, p.light, p.view);
                let c = cosine_weight(p.light);
                let d = f_gt - f_est;
                acc += (c * c * d * d).cbrt();
            }
            *o = (acc / count).sqrt();
        }
    });
    let map = ImageGrid::new(w, gt.height(), 1, out, gt.ppi())?;
    let mean = map.mean();
    Ok((mean, map))
}

/// Box filter with replicate padding, per channel.
pub fn box_filter(img: &ImageGrid, size: usize) -> ImageGrid {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = (size / 2) as isize;
    let norm = 1.0 / size as f64;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dx in -r..=r {
                    acc += img.get(clamp(x as isize + dx, w), y, ch);
                }
                tmp[(y * w + x) * c + ch] = acc * norm;
            }
        }
    }
    let mut out = vec![0.0; tmp.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in -r..=r {
                    acc += tmp[(clamp(y as isize + dy, h) * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc * norm;
            }
        }
    }
    ImageGrid::new(w, h, c, out, img.ppi()).expect("box filter preserves shape")
}

/// Mean absolute difference between the box-filtered image and itself
/// shifted by `box_size` pixels up, down, left and right, averaged over the
/// four shifts. Each shift is compared on its overlap region only.
pub fn homogeneity(img: &ImageGrid, box_size: usize) -> Result<f64> {
    if box_size < 3 || box_size % 2 == 0 {
        return Err(Error::InvalidValue(format!("box size {box_size} must be odd and >= 3")));
    }
    let min = 3 * box_size;
    if img.width() <= min || img.height() <= min {
        return Err(Error::ImageTooSmall { width: img.width(), height: img.height(), min });
    }
    let f = box_filter(img, box_size);
    let (w, h, c) = (f.width(), f.height(), f.channels());
    let b = box_size as isize;
    let mut total = 0.0;
    for (dx, dy) in [(0, -b), (0, b), (-b, 0), (b, 0)] {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..h as isize {
            let ys = y + dy;
            if ys < 0 || ys >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let xs = x + dx;
                if xs < 0 || xs >= w as isize {
                    continue;
                }
                for ch in 0..c {
                    acc += (f.get(x as usize, y as usize, ch) - f.get(xs as usize, ys as usize, ch)).abs();
                }
                n += c;
            }
        }
        total += acc / n as f64;
    }
    Ok(total / 4.0)
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Shannon entropy (nats) of the equal-width histogram of `a` over [0, 1].
pub fn entropy(a: &ImageGrid, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidValue(format!("{bins} bins")));
    }
    let a = a.luminance();
    let mut hist = vec![0usize; bins];
    for &v in a.data() {
        hist[bin_of(v, bins)] += 1;
    }
    let n = a.data().len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// Histogram mutual information (nats) with `bins` equal-width bins per
/// marginal over [0, 1]. Color images are reduced to luminance first.
pub fn mutual_information(a: &ImageGrid, b: &ImageGrid, bins: usize) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidValue(format!("{bins} bins")));
    }
    let (a, b) = (a.luminance(), b.luminance());
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&u, &v) in a.data().iter().zip(b.data()) {
        let (i, j) = (bin_of(u, bins), bin_of(v, bins));
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = a.data().len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij * n * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// One row of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub material: String,
    pub l1_spec: f64,
    pub l1_rough: f64,
    pub angular_deg: f64,
    /// `None` when either map is constant.
    pub pearson_spec: Option<f64>,
    pub pearson_rough: Option<f64>,
    pub l_brdf: f64,
    /// `None` when the image is too small for the detector's box size.
    pub artifact: Option<bool>,
}

/// Evaluates an estimate against its ground truth. `input` is the image the
/// estimate was made from, used by the artifact detector.
pub fn evaluate(
    material: &str,
    gt: &MapStack,
    est: &MapStack,
    input: &ImageGrid,
    s: &RenderSet,
    k: &ImageGrid,
    thresholds: &ArtifactThresholds,
) -> Result<MetricRow> {
    Ok(MetricRow {
        material: material.to_string(),
        l1_spec: map_l1(&gt.specular, &est.specular)?,
        l1_rough: map_l1(&gt.roughness, &est.roughness)?,
        angular_deg: angular_error(&gt.normals, &est.normals)?,
        pearson_spec: pearson(&gt.specular, &est.specular).ok(),
        pearson_rough: pearson(&gt.roughness, &est.roughness).ok(),
        l_brdf: brdf_distance(gt, est, s, k)?.0,
        artifact: match detect_artifacts(input, est, thresholds) {
            Ok(r) => Some(r.stack_verdict),
            Err(Error::ImageTooSmall { .. }) => None,
            Err(e) => return Err(e),
        },
    })
}

pub fn write_metric_csv(path: &std::path::Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::render::sample_render_set;

    fn gray(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> ImageGrid {
        ImageGrid::from_fn(w, h, 100.0, f).unwrap()
    }

    #[test]
    fn l1_cases() {
        let a = ImageGrid::constant(4, 4, 1, 0.0, 1.0).unwrap();
        let b = ImageGrid::constant(4, 4, 1, 0.25, 1.0).unwrap();
        assert_eq!(map_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(map_l1(&a, &b).unwrap(), 0.25);
        let c = ImageGrid::constant(4, 3, 1, 0.25, 1.0).unwrap();
        assert!(map_l1(&a, &c).is_err());
    }

    #[test]
    fn angular_cases() {
        let a = NormalMap::flat(3, 3);
        assert_eq!(angular_error(&a, &a).unwrap(), 0.0);
        let b = NormalMap::new_unchecked(3, 3, vec![Vec3::new(1.0, 0.0, 0.0); 9]).unwrap();
        assert!((angular_error(&a, &b).unwrap() - 90.0).abs() < 1e-12);
        let c = NormalMap::new_unchecked(1, 1, vec![Vec3::new(0.0, 0.0, 1.0 + 1e-9)]).unwrap();
        assert_eq!(angular_error(&NormalMap::flat(1, 1), &c).unwrap(), 0.0);
    }

    #[test]
    fn pearson_cases() {
        let x = gray(5, 5, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let inv = x.map(|v| 1.0 - v).unwrap();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &inv).unwrap() + 1.0).abs() < 1e-12);
        let c = ImageGrid::constant(5, 5, 1, 0.3, 100.0).unwrap();
        assert!(matches!(pearson(&c, &x), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&x, &c), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn brdf_distance_identity_and_symmetry() {
        let s = sample_render_set(10, 1).unwrap();
        let k = ImageGrid::constant(8, 8, 1, 0.5, 100.0).unwrap();
        let a = MapStack::uniform(8, 8, 0.4, 0.3, 100.0).unwrap();
        let b = MapStack::uniform(8, 8, 0.7, 0.5, 100.0).unwrap();
        let (d, map) = brdf_distance(&a, &a, &s, &k).unwrap();
        assert_eq!(d, 0.0);
        assert!(map.data().iter().all(|&v| v == 0.0));
        let ab = brdf_distance(&a, &b, &s, &k).unwrap().0;
        let ba = brdf_distance(&b, &a, &s, &k).unwrap().0;
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
    }

    #[test]
    fn homogeneity_of_constant_is_zero() {
        let c = ImageGrid::constant(40, 40, 1, 0.7, 100.0).unwrap();
        assert_eq!(homogeneity(&c, 3).unwrap(), 0.0);
    }

    #[test]
    fn homogeneity_scales_linearly() {
        let img = gray(40, 40, |x, y| ((x / 4 + y / 6) % 3) as f64 / 3.0);
        let h = homogeneity(&img, 5).unwrap();
        let h2 = homogeneity(&img.map(|v| 0.5 * v).unwrap(), 5).unwrap();
        assert!(h > 0.0);
        assert!((h2 - 0.5 * h).abs() < 1e-12);
    }

    #[test]
    fn homogeneity_rejects_small_or_even_boxes() {
        let img = ImageGrid::constant(9, 9, 1, 0.0, 1.0).unwrap();
        assert!(matches!(homogeneity(&img, 3), Err(Error::ImageTooSmall { .. })));
        let img = ImageGrid::constant(40, 40, 1, 0.0, 1.0).unwrap();
        assert!(homogeneity(&img, 4).is_err());
        assert!(homogeneity(&img, 1).is_err());
    }

    #[test]
    fn mi_of_image_with_itself_is_its_entropy() {
        let a = gray(16, 16, |x, y| ((x * 13 + y * 29) % 97) as f64 / 97.0);
        let mi = mutual_information(&a, &a, 16).unwrap();
        assert!((mi - entropy(&a, 16).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mi_requires_matching_sizes_and_bins() {
        let a = ImageGrid::constant(4, 4, 1, 0.1, 1.0).unwrap();
        let b = ImageGrid::constant(4, 5, 1, 0.1, 1.0).unwrap();
        assert!(mutual_information(&a, &b, 8).is_err());
        assert!(mutual_information(&a, &a, 1).is_err());
        assert_eq!(mutual_information(&a, &a, 8).unwrap(), 0.0);
    }
}
