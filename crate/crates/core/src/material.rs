//! Image grids, normal maps and the specular-lobe map stack.
//!
//! All data is linear-light. Normals are kept as explicit unit vectors in a
//! tangent frame whose x axis follows increasing column index and whose y
//! axis follows increasing row index; the sample plane is z-up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Tolerance on the unit-length invariant of stored normals.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
/// Lower bound applied to decoded z before renormalizing.
pub const DECODE_MIN_Z: f64 = 1e-4;
/// Decoded vectors shorter than this are rejected.
pub const DECODE_MIN_NORM: f64 = 1e-6;

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Row-major scalar image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    ppi: f64,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>, ppi: f64) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidValue(format!("channel count {channels} (expected 1 or 3)")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if !(ppi > 0.0 && ppi.is_finite()) {
            return Err(Error::InvalidValue(format!("ppi {ppi}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, channels, data, ppi })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64, ppi: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels], ppi)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        ppi: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data, ppi)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ppi(&self) -> f64 {
        self.ppi
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel values of pixel `i` (row-major index).
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn with_ppi(mut self, ppi: f64) -> Self {
        self.ppi = ppi;
        self
    }

    pub fn same_size(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Single-channel luminance (Rec. 709 weights); identity on gray images.
    pub fn luminance(&self) -> ImageGrid {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect();
        ImageGrid { width: self.width, height: self.height, channels: 1, data, ppi: self.ppi }
    }

    /// Applies `f` to every stored value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ImageGrid> {
        ImageGrid::new(self.width, self.height, self.channels, self.data.iter().map(|&v| f(v)).collect(), self.ppi)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Mean of all stored values; exact for constant grids.
    pub fn mean(&self) -> f64 {
        let Some(&first) = self.data.first() else {
            return 0.0;
        };
        first + self.data.iter().map(|x| x - first).sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel unit normals, upper hemisphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMap {
    width: usize,
    height: usize,
    vectors: Vec<Vec3>,
}

impl NormalMap {
    /// Builds a map, enforcing unit length and z > 0.
    pub fn new(width: usize, height: usize, vectors: Vec<Vec3>) -> Result<Self> {
        let map = Self::new_unchecked(width, height, vectors)?;
        if let Some(v) = map.violations().into_iter().next() {
            return Err(Error::InvalidValue(format!("normal at pixel {}: {:?}", v.pixel, v.rule)));
        }
        Ok(map)
    }

    /// Builds a map checking only the vector count. Use [`validate_stack`]
    /// to inspect the remaining invariants.
    pub fn new_unchecked(width: usize, height: usize, vectors: Vec<Vec3>) -> Result<Self> {
        if vectors.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for {width}x{height}",
                vectors.len()
            )));
        }
        Ok(Self { width, height, vectors })
    }

    pub fn flat(width: usize, height: usize) -> Self {
        Self { width, height, vectors: vec![Vec3::Z; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.vectors[y * self.width + x]
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, v) in self.vectors.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation { map: MapKind::Normals, pixel: i, rule: Rule::NonFinite });
                continue;
            }
            if (v.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
                out.push(Violation { map: MapKind::Normals, pixel: i, rule: Rule::NotUnit });
            }
            if v.z <= 0.0 {
                out.push(Violation { map: MapKind::Normals, pixel: i, rule: Rule::LowerHemisphere });
            }
        }
        out
    }
}

/// Normals, specular and roughness maps of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapStack {
    pub normals: NormalMap,
    pub specular: ImageGrid,
    pub roughness: ImageGrid,
}

impl MapStack {
    /// Checks dimensional agreement and channel counts. Value ranges are
    /// reported by [`validate_stack`].
    pub fn new(normals: NormalMap, specular: ImageGrid, roughness: ImageGrid) -> Result<Self> {
        for (name, img) in [("specular", &specular), ("roughness", &roughness)] {
            if img.channels() != 1 {
                return Err(Error::DimensionMismatch(format!("{name} has {} channels", img.channels())));
            }
            if img.width() != normals.width() || img.height() != normals.height() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, normals are {}x{}",
                    img.width(),
                    img.height(),
                    normals.width(),
                    normals.height()
                )));
            }
        }
        Ok(Self { normals, specular, roughness })
    }

    /// Spatially constant stack with flat normals.
    pub fn uniform(width: usize, height: usize, specular: f64, roughness: f64, ppi: f64) -> Result<Self> {
        Self::new(
            NormalMap::flat(width, height),
            ImageGrid::constant(width, height, 1, specular, ppi)?,
            ImageGrid::constant(width, height, 1, roughness, ppi)?,
        )
    }

    pub fn width(&self) -> usize {
        self.normals.width()
    }

    pub fn height(&self) -> usize {
        self.normals.height()
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn ppi(&self) -> f64 {
        self.specular.ppi()
    }

    pub fn check_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width() != width || self.height() != height {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {width}x{height}, stack is {}x{}",
                self.width(),
                self.height()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Normals,
    Specular,
    Roughness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NonFinite,
    NotUnit,
    LowerHemisphere,
    OutOfRange,
    SizeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub map: MapKind,
    pub pixel: usize,
    pub rule: Rule,
}

/// Lists every broken invariant of `m`. Never fails.
pub fn validate_stack(m: &MapStack) -> Vec<Violation> {
    let mut out = m.normals.violations();
    for (kind, img) in [(MapKind::Specular, &m.specular), (MapKind::Roughness, &m.roughness)] {
        if img.width() != m.width() || img.height() != m.height() || img.channels() != 1 {
            out.push(Violation { map: kind, pixel: 0, rule: Rule::SizeMismatch });
            continue;
        }
        for (i, &v) in img.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation { map: kind, pixel: i, rule: Rule::OutOfRange });
            }
        }
    }
    out
}

/// Maps each component from [-1, 1] to [0, 1].
pub fn encode_normals(n: &NormalMap, ppi: f64) -> Result<ImageGrid> {
    let data = n
        .vectors
        .iter()
        .flat_map(|v| [(v.x + 1.0) * 0.5, (v.y + 1.0) * 0.5, (v.z + 1.0) * 0.5])
        .collect();
    ImageGrid::new(n.width, n.height, 3, data, ppi)
}

/// Inverse of [`encode_normals`]: `v = 2c - 1`, z clamped to at least
/// [`DECODE_MIN_Z`], then renormalized.
pub fn decode_normals(img: &ImageGrid) -> Result<NormalMap> {
    if img.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "normal image has {} channels, expected 3",
            img.channels()
        )));
    }
    let mut vectors = Vec::with_capacity(img.pixel_count());
    for (i, p) in img.data().chunks_exact(3).enumerate() {
        let v = Vec3::new(2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0, (2.0 * p[2] - 1.0).max(DECODE_MIN_Z));
        let norm = v.norm();
        if !(norm >= DECODE_MIN_NORM) {
            return Err(Error::DegenerateNormal { pixel: i });
        }
        vectors.push(v * (1.0 / norm));
    }
    Ok(NormalMap { width: img.width(), height: img.height(), vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: Vec3) -> NormalMap {
        NormalMap::new_unchecked(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn encode_axis_cases() {
        let img = encode_normals(&single(Vec3::Z), 100.0).unwrap();
        assert_eq!(img.pixel(0), &[0.5, 0.5, 1.0]);
        let img = encode_normals(&single(Vec3::new(1.0, 0.0, 0.0)), 100.0).unwrap();
        assert_eq!(img.pixel(0), &[1.0, 0.5, 0.5]);
    }

    #[test]
    fn decode_flat_and_degenerate_pixels() {
        let img = ImageGrid::new(2, 1, 3, vec![0.5, 0.5, 1.0, 0.5, 0.5, 0.5], 100.0).unwrap();
        let n = decode_normals(&img).unwrap();
        assert_eq!(n.vectors(), &[Vec3::Z, Vec3::Z]);
    }

    #[test]
    fn decode_rejects_gray_images() {
        let img = ImageGrid::constant(2, 2, 1, 0.5, 100.0).unwrap();
        assert!(matches!(decode_normals(&img), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn image_rejects_bad_lengths_and_nan() {
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3], 1.0).is_err());
        assert!(ImageGrid::new(1, 1, 1, vec![f64::NAN], 1.0).is_err());
        assert!(ImageGrid::new(1, 1, 2, vec![0.0; 2], 1.0).is_err());
    }

    #[test]
    fn flat_stack_is_valid() {
        let m = MapStack::uniform(8, 8, 0.04, 0.5, 200.0).unwrap();
        assert!(validate_stack(&m).is_empty());
    }

    #[test]
    fn out_of_range_specular_is_reported() {
        let mut spec = vec![0.04; 64];
        spec[10] = 1.5;
        let m = MapStack::new(
            NormalMap::flat(8, 8),
            ImageGrid::new(8, 8, 1, spec, 200.0).unwrap(),
            ImageGrid::constant(8, 8, 1, 0.5, 200.0).unwrap(),
        )
        .unwrap();
        assert_eq!(
            validate_stack(&m),
            vec![Violation { map: MapKind::Specular, pixel: 10, rule: Rule::OutOfRange }]
        );
    }

    #[test]
    fn short_normal_is_reported() {
        let mut v = vec![Vec3::Z; 64];
        v[3] = Vec3::new(0.0, 0.0, 0.8);
        let m = MapStack::new(
            NormalMap::new_unchecked(8, 8, v).unwrap(),
            ImageGrid::constant(8, 8, 1, 0.04, 200.0).unwrap(),
            ImageGrid::constant(8, 8, 1, 0.5, 200.0).unwrap(),
        )
        .unwrap();
        let report = validate_stack(&m);
        assert_eq!(report, vec![Violation { map: MapKind::Normals, pixel: 3, rule: Rule::NotUnit }]);
        assert_eq!(report, validate_stack(&m));
    }

    #[test]
    fn checked_constructor_rejects_lower_hemisphere() {
        assert!(NormalMap::new(1, 1, vec![Vec3::new(0.0, 0.0, -1.0)]).is_err());
        assert!(NormalMap::new(1, 1, vec![Vec3::Z]).is_ok());
    }

    #[test]
    fn stack_rejects_mismatched_maps() {
        let r = MapStack::new(
            NormalMap::flat(8, 8),
            ImageGrid::constant(8, 4, 1, 0.04, 200.0).unwrap(),
            ImageGrid::constant(8, 8, 1, 0.5, 200.0).unwrap(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn luminance_of_gray_rgb() {
        let img = ImageGrid::constant(2, 2, 3, 0.25, 1.0).unwrap();
        let l = img.luminance();
        assert_eq!(l.channels(), 1);
        assert!(l.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
