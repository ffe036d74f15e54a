//! Training-time augmentation. Geometric transforms act on the scan, the
//! base color and every ground-truth map alike (normals are also rotated in
//! the tangent plane); photometric transforms only touch the scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MaterialSample;
use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack, NormalMap};
use crate::math::Vec3;

const HSV_VALUE_JITTER: f64 = 0.10;
const HSV_SATURATION_JITTER: f64 = 0.05;
const MIN_ERASE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarterTurns {
    #[default]
    Off,
    /// Always `k` counter-clockwise quarter turns (in image coordinates).
    Fixed(u8),
    Random,
}

/// Which transforms to apply and their magnitude bounds. The default is the
/// identity. Magnitudes are drawn uniformly in `[0, bound]` (or the given
/// interval) from the augmentation seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Square crop side, pixels.
    pub crop: Option<usize>,
    pub quarter_turns: QuarterTurns,
    /// Largest small-angle rotation, degrees, either sign.
    pub max_rotation_deg: Option<f64>,
    /// Rescale factor interval.
    pub rescale: Option<(f64, f64)>,
    pub hsv_jitter: bool,
    pub max_noise_std: Option<f64>,
    pub max_blur_sigma: Option<f64>,
    /// Largest erased area as a fraction of the image.
    pub max_erase_fraction: Option<f64>,
}

impl AugmentPolicy {
    /// Bounds used for training runs.
    pub fn training() -> Self {
        Self {
            crop: None,
            quarter_turns: QuarterTurns::Random,
            max_rotation_deg: Some(10.0),
            rescale: Some((0.9, 1.1)),
            hsv_jitter: true,
            max_noise_std: Some(0.01),
            max_blur_sigma: Some(0.6),
            max_erase_fraction: Some(0.05),
        }
    }
}

/// Applies `policy` to `s`, deterministically for `seed`.
pub fn augment(s: &MaterialSample, policy: &AugmentPolicy, seed: u64) -> Result<MaterialSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.clone();
    if let Some(c) = policy.crop {
        let (w, h) = (out.width(), out.height());
        if c == 0 || c > w || c > h {
            return Err(Error::CropTooLarge { crop: c, width: w, height: h });
        }
        let x0 = rng.random_range(0..=w - c);
        let y0 = rng.random_range(0..=h - c);
        out = geometric(&out, c, c, false, |x, y| ((x + x0) as f64, (y + y0) as f64))?;
    }
    let k = match policy.quarter_turns {
        QuarterTurns::Off => 0,
        QuarterTurns::Fixed(k) => k % 4,
        QuarterTurns::Random => rng.random_range(0..4u8),
    };
    if k > 0 {
        out = rotate_quarter(&out, k)?;
    }
    if let Some(max) = policy.max_rotation_deg {
        let deg = max * (2.0 * rng.random::<f64>() - 1.0);
        out = rotate(&out, deg)?;
    }
    if let Some((lo, hi)) = policy.rescale {
        let f = lo + (hi - lo) * rng.random::<f64>();
        out = rescale(&out, f)?;
    }
    if policy.hsv_jitter {
        let dv = HSV_VALUE_JITTER * (2.0 * rng.random::<f64>() - 1.0);
        let ds = HSV_SATURATION_JITTER * (2.0 * rng.random::<f64>() - 1.0);
        out.scan = hsv_jitter(&out.scan, dv, ds)?;
    }
    if let Some(max) = policy.max_noise_std {
        let std = max * rng.random::<f64>();
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidValue(e.to_string()))?;
        let data = out.scan.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
        out.scan = ImageGrid::new(out.scan.width(), out.scan.height(), out.scan.channels(), data, out.scan.ppi())?;
    }
    if let Some(max) = policy.max_blur_sigma {
        out.scan = gaussian_blur(&out.scan, max * rng.random::<f64>())?;
    }
    if let Some(max) = policy.max_erase_fraction {
        out.scan = random_erase(&out.scan, max, &mut rng)?;
    }
    Ok(out)
}

/// `k` quarter turns; a tangent vector (1, 0) becomes (0, 1) after one turn.
pub fn rotate_quarter(s: &MaterialSample, k: u8) -> Result<MaterialSample> {
    let mut out = s.clone();
    for _ in 0..k % 4 {
        let (w, h) = (out.width(), out.height());
        let turned = geometric(&out, h, w, false, |x, y| (y as f64, (h - 1 - x) as f64))?;
        out = MaterialSample { gt: rotate_normals(turned.gt, 0.0, 1.0)?, ..turned };
    }
    Ok(out)
}

/// Rotation by `deg` about the image center with bilinear resampling.
pub fn rotate(s: &MaterialSample, deg: f64) -> Result<MaterialSample> {
    let (w, h) = (s.width(), s.height());
    let (cos, sin) = (deg.to_radians().cos(), deg.to_radians().sin());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let out = geometric(s, w, h, true, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    })?;
    Ok(MaterialSample { gt: rotate_normals(out.gt, cos, sin)?, ..out })
}

/// Isotropic rescale by `factor`; the pixel density scales with it.
pub fn rescale(s: &MaterialSample, factor: f64) -> Result<MaterialSample> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidValue(format!("rescale factor {factor}")));
    }
    let w = ((s.width() as f64 * factor).round() as usize).max(1);
    let h = ((s.height() as f64 * factor).round() as usize).max(1);
    let (fx, fy) = (s.width() as f64 / w as f64, s.height() as f64 / h as f64);
    let mut out = geometric(s, w, h, true, |x, y| ((x as f64 + 0.5) * fx - 0.5, (y as f64 + 0.5) * fy - 0.5))?;
    out.ppi = s.ppi * factor;
    out.gt = with_ppi(out.gt, out.ppi)?;
    out.scan = out.scan.with_ppi(out.ppi);
    out.base_color = out.base_color.with_ppi(out.ppi);
    Ok(out)
}

fn with_ppi(m: MapStack, ppi: f64) -> Result<MapStack> {
    MapStack::new(m.normals, m.specular.with_ppi(ppi), m.roughness.with_ppi(ppi))
}

fn rotate_normals(m: MapStack, cos: f64, sin: f64) -> Result<MapStack> {
    let (w, h) = (m.width(), m.height());
    let v = m.normals.vectors().iter().map(|n| n.rotate_z(cos, sin)).collect();
    MapStack::new(NormalMap::new_unchecked(w, h, v)?, m.specular, m.roughness)
}

/// Resamples every image of `s` onto a `w` x `h` grid, where `src(x, y)` is
/// the source position of output pixel (x, y). Without `bilinear` the
/// source pixel is copied directly (integer maps); with it values are
/// interpolated with edge clamping.
fn geometric(
    s: &MaterialSample,
    w: usize,
    h: usize,
    bilinear: bool,
    src: impl Fn(usize, usize) -> (f64, f64),
) -> Result<MaterialSample> {
    let coords: Vec<(f64, f64)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| src(x, y)).collect();
    let grid = |img: &ImageGrid| -> Result<ImageGrid> {
        let c = img.channels();
        let mut data = Vec::with_capacity(w * h * c);
        for &(x, y) in &coords {
            for ch in 0..c {
                data.push(if bilinear { sample_bilinear(img.width(), img.height(), x, y, |i| img.pixel(i)[ch]) } else {
                    img.get(x as usize, y as usize, ch)
                });
            }
        }
        ImageGrid::new(w, h, c, data, img.ppi())
    };
    let n = &s.gt.normals;
    let normals: Vec<Vec3> = coords
        .iter()
        .map(|&(x, y)| {
            if bilinear {
                let comp = |f: fn(Vec3) -> f64| sample_bilinear(n.width(), n.height(), x, y, |i| f(n.vectors()[i]));
                let v = Vec3::new(comp(|v| v.x), comp(|v| v.y), comp(|v| v.z));
                v.normalized().unwrap_or(Vec3::Z)
            } else {
                n.get(x as usize, y as usize)
            }
        })
        .collect();
    Ok(MaterialSample {
        gt: MapStack::new(
            NormalMap::new_unchecked(w, h, normals)?,
            grid(&s.gt.specular)?,
            grid(&s.gt.roughness)?,
        )?,
        scan: grid(&s.scan)?,
        base_color: grid(&s.base_color)?,
        ..s.clone()
    })
}

fn sample_bilinear(w: usize, h: usize, x: f64, y: f64, at: impl Fn(usize) -> f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let top = at(y0 * w + x0) * (1.0 - tx) + at(y0 * w + x1) * tx;
    let bottom = at(y1 * w + x0) * (1.0 - tx) + at(y1 * w + x1) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn to_display(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let rgb = super::hsv_to_rgb(h, s, v);
    rgb.map(|c| c.clamp(0.0, 1.0))
}

/// Scales value by `1 + dv` and saturation by `1 + ds` in display space.
fn hsv_jitter(img: &ImageGrid, dv: f64, ds: f64) -> Result<ImageGrid> {
    let data: Vec<f64> = if img.channels() == 3 {
        img.data()
            .chunks(3)
            .flat_map(|p| {
                let [h, s, v] = rgb_to_hsv([to_display(p[0]), to_display(p[1]), to_display(p[2])]);
                let hsv = [h, (s * (1.0 + ds)).clamp(0.0, 1.0), (v * (1.0 + dv)).clamp(0.0, 1.0)];
                hsv_to_rgb(hsv).map(to_linear)
            })
            .collect()
    } else {
        img.data().iter().map(|&v| to_linear((to_display(v) * (1.0 + dv)).clamp(0.0, 1.0))).collect()
    };
    ImageGrid::new(img.width(), img.height(), img.channels(), data, img.ppi())
}

/// Separable Gaussian blur with replicate padding; `sigma <= 0` is a copy.
fn gaussian_blur(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h, c) = (img.width() as isize, img.height() as isize, img.channels());
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, i) in kernel.iter().zip(-r..=r) {
                        let (xx, yy) = if horizontal { ((x + i).clamp(0, w - 1), y) } else { (x, (y + i).clamp(0, h - 1)) };
                        acc += k * src[(yy * w + xx) as usize * c + ch];
                    }
                    out[(y * w + x) as usize * c + ch] = acc / norm;
                }
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    ImageGrid::new(img.width(), img.height(), c, pass(&tmp, false), img.ppi())
}

/// Fills a random rectangle with a random flat color.
fn random_erase(img: &ImageGrid, max_fraction: f64, rng: &mut ChaCha8Rng) -> Result<ImageGrid> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let lo = MIN_ERASE_FRACTION.min(max_fraction);
    let area = (lo + (max_fraction - lo) * rng.random::<f64>()) * (w * h) as f64;
    let aspect = (2f64.ln() * (2.0 * rng.random::<f64>() - 1.0)).exp();
    let ew = ((area * aspect).sqrt().round() as usize).clamp(1, w);
    let eh = ((area / aspect).sqrt().round() as usize).clamp(1, h);
    let x0 = rng.random_range(0..=w - ew);
    let y0 = rng.random_range(0..=h - eh);
    let fill: Vec<f64> = (0..c).map(|_| rng.random()).collect();
    let mut data = img.data().to_vec();
    for y in y0..y0 + eh {
        for x in x0..x0 + ew {
            data[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&fill);
        }
    }
    ImageGrid::new(w, h, c, data, img.ppi())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::validate_stack;
    use crate::synth::{generate_material, MaterialFamily, DEFAULT_PPI};

    fn sample() -> MaterialSample {
        generate_material(MaterialFamily::Twill, 4, 64, DEFAULT_PPI).unwrap()
    }

    #[test]
    fn identity_policy_is_a_copy() {
        let s = sample();
        assert_eq!(augment(&s, &AugmentPolicy::default(), 9).unwrap(), s);
    }

    #[test]
    fn two_quarter_turns_equal_a_half_turn() {
        let s = sample();
        let twice = rotate_quarter(&rotate_quarter(&s, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, rotate_quarter(&s, 2).unwrap());
        assert_eq!(rotate_quarter(&s, 4).unwrap(), s);
    }

    #[test]
    fn quarter_turn_moves_pixels_and_rotates_normals() {
        let mut s = sample();
        let (w, h) = (s.width(), s.height());
        let mut v = s.gt.normals.vectors().to_vec();
        v[3 * w + 10] = Vec3::new(1.0, 0.0, 0.0);
        s.gt.normals = NormalMap::new_unchecked(w, h, v).unwrap();
        let r = rotate_quarter(&s, 1).unwrap();
        // (x, y) = (10, 3) lands at (h - 1 - 3, 10).
        let n = r.gt.normals.get(h - 1 - 3, 10);
        assert!(n.x.abs() < 1e-15 && (n.y - 1.0).abs() < 1e-15 && n.z == 0.0);
        assert_eq!(r.gt.specular.get(h - 1 - 3, 10, 0), s.gt.specular.get(10, 3, 0));
    }

    #[test]
    fn crop_checks_size_and_keeps_content() {
        let s = sample();
        let p = AugmentPolicy { crop: Some(65), ..Default::default() };
        assert!(matches!(augment(&s, &p, 0), Err(Error::CropTooLarge { .. })));
        let p = AugmentPolicy { crop: Some(64), ..Default::default() };
        assert_eq!(augment(&s, &p, 0).unwrap(), s);
        let p = AugmentPolicy { crop: Some(40), ..Default::default() };
        let c = augment(&s, &p, 3).unwrap();
        assert_eq!((c.width(), c.height()), (40, 40));
    }

    #[test]
    fn training_policy_is_deterministic_and_valid() {
        let s = sample();
        let p = AugmentPolicy::training();
        let a = augment(&s, &p, 17).unwrap();
        assert_eq!(a, augment(&s, &p, 17).unwrap());
        assert_ne!(a, augment(&s, &p, 18).unwrap());
        assert!(validate_stack(&a.gt).is_empty());
        assert!(a.scan.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn photometric_transforms_leave_maps_alone() {
        let s = sample();
        let p = AugmentPolicy {
            hsv_jitter: true,
            max_noise_std: Some(0.05),
            max_blur_sigma: Some(1.0),
            max_erase_fraction: Some(0.1),
            ..Default::default()
        };
        let a = augment(&s, &p, 5).unwrap();
        assert_eq!(a.gt, s.gt);
        assert_eq!(a.base_color, s.base_color);
        assert_ne!(a.scan, s.scan);
    }

    #[test]
    fn zero_hsv_jitter_round_trips() {
        let s = sample();
        let j = hsv_jitter(&s.scan, 0.0, 0.0).unwrap();
        for (a, b) in j.data().iter().zip(s.scan.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_tracks_pixel_density() {
        let s = sample();
        let r = rescale(&s, 1.5).unwrap();
        assert_eq!((r.width(), r.height()), (96, 96));
        assert_eq!(r.ppi, 300.0);
        assert_eq!(r.gt.ppi(), 300.0);
    }

    #[test]
    fn small_rotation_of_zero_is_a_copy() {
        let s = sample();
        let r = rotate(&s, 0.0).unwrap();
        assert_eq!(r.gt.specular, s.gt.specular);
        for (a, b) in r.gt.normals.vectors().iter().zip(s.gt.normals.vectors()) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }
}
