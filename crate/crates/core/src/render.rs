//! Planar material shading: a Lambertian term from the albedo image plus an
//! isotropic GGX specular lobe driven by the map stack.
//!
//! Lights and views are directional. The shading value excludes the cosine
//! foreshortening term; callers that need it multiply by [`cosine_weight`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack};
use crate::math::Vec3;

/// Lower bound on the GGX width, keeps the distribution finite at rough = 0.
pub const MIN_ALPHA: f64 = 1e-3;
/// Specular reflectance at normal incidence for specular = 1.
pub const F0_SCALE: f64 = 0.08;
pub const DEFAULT_RENDER_SET_SIZE: usize = 50;
pub const DEFAULT_RENDER_SET_SEED: u64 = 7;
/// Number of lights in the simulated scanner illumination.
pub const SCAN_LIGHT_COUNT: usize = 32;

const DIRECTION_TOLERANCE: f64 = 1e-6;
/// Sampled pairs closer to the horizon than this are rejected.
const MIN_SAMPLED_ELEVATION_COS: f64 = 0.05;
const MAX_DIFFERENCE_ANGLE: f64 = 80.0 * PI / 180.0;

/// Unit vector in the upper hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction(Vec3);

impl Direction {
    /// Normalizes `v`; rejects vectors with z <= 0 or zero length.
    pub fn new(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        // Already-unit input is kept bit for bit so that text round trips are exact.
        let u = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            v
        } else {
            v.normalized()
                .ok_or_else(|| Error::InvalidValue(format!("direction {v:?} cannot be normalized")))?
        };
        if u.z <= 0.0 {
            return Err(Error::InvalidValue(format!("direction {v:?} is not above the surface")));
        }
        Ok(Self(u))
    }

    /// Colatitude `theta` and azimuth `phi`, radians.
    pub fn from_spherical(theta: f64, phi: f64) -> Result<Self> {
        Self::new(Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()))
    }

    pub const fn up() -> Self {
        Self(Vec3::Z)
    }

    #[inline]
    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn is_valid(self) -> bool {
        (self.0.norm() - 1.0).abs() <= DIRECTION_TOLERANCE && self.0.z > 0.0
    }
}

impl TryFrom<[f64; 3]> for Direction {
    type Error = Error;
    fn try_from(a: [f64; 3]) -> Result<Self> {
        Direction::new(a.into())
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        d.0.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightView {
    pub light: Direction,
    pub view: Direction,
}

/// Fixed set of (light, view) pairs shared by the render-space metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSet {
    pairs: Vec<LightView>,
}

impl RenderSet {
    pub fn new(pairs: Vec<LightView>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyRenderSet);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[LightView] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One pair per line, `lx ly lz vx vy vz`. Blank lines and `#` comments
    /// are skipped; directions are renormalized.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("render set line {}", lineno + 1);
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(ctx(), e.to_string()))?;
            if vals.len() != 6 {
                return Err(Error::parse(ctx(), format!("expected 6 numbers, found {}", vals.len())));
            }
            let light = Direction::new(Vec3::new(vals[0], vals[1], vals[2]))
                .map_err(|e| Error::parse(ctx(), e.to_string()))?;
            let view = Direction::new(Vec3::new(vals[3], vals[4], vals[5]))
                .map_err(|e| Error::parse(ctx(), e.to_string()))?;
            pairs.push(LightView { light, view });
        }
        Self::new(pairs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let (l, v) = (p.light.vec(), p.view.vec());
            let _ = writeln!(s, "{} {} {} {} {} {}", l.x, l.y, l.z, v.x, v.y, v.z);
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mean_light_cosine(&self) -> f64 {
        self.pairs.iter().map(|p| cosine_weight(p.light)).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Per-pixel radiance, same channel layout as the albedo it was shaded with.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl RadianceImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// GGX / Trowbridge-Reitz distribution.
#[inline]
fn ggx_distribution(n_dot_h: f64, alpha2: f64) -> f64 {
    let d = n_dot_h * n_dot_h * (alpha2 - 1.0) + 1.0;
    alpha2 / (PI * d * d)
}

/// Smith Lambda for GGX.
#[inline]
fn smith_lambda(cos: f64, alpha2: f64) -> f64 {
    let cos2 = cos * cos;
    let tan2 = (1.0 - cos2).max(0.0) / cos2;
    0.5 * (-1.0 + (1.0 + alpha2 * tan2).sqrt())
}

/// Schlick Fresnel with the grazing value tied to F0, `f90 = min(1, 50 F0)`,
/// so that a zero specular map switches the lobe off at every angle.
#[inline]
fn schlick(f0: f64, cos: f64) -> f64 {
    let f90 = (50.0 * f0).min(1.0);
    let m = (1.0 - cos).clamp(0.0, 1.0);
    let m2 = m * m;
    f0 + (f90 - f0) * m2 * m2 * m
}

/// Cook-Torrance GGX lobe `D F G / (4 (n.l)(n.v))` with alpha = rough^2,
/// height-correlated Smith masking and Schlick Fresnel with F0 = 0.08 spec.
/// A zero specular value yields zero for every geometry.
///
/// Returns 0 when either direction is below the local tangent plane.
/// The result is exactly symmetric in `l` and `v`.
#[inline]
pub fn ggx_specular(normal: Vec3, spec: f64, rough: f64, l: Direction, v: Direction) -> f64 {
    let (l, v) = (l.vec(), v.vec());
    let n_dot_l = normal.dot(l);
    let n_dot_v = normal.dot(v);
    if n_dot_l <= 0.0 || n_dot_v <= 0.0 {
        return 0.0;
    }
    let Some(h) = (l + v).normalized() else {
        return 0.0;
    };
    let alpha = (rough * rough).max(MIN_ALPHA);
    let alpha2 = alpha * alpha;
    let d = ggx_distribution(normal.dot(h).max(0.0), alpha2);
    let g = 1.0 / (1.0 + (smith_lambda(n_dot_l, alpha2) + smith_lambda(n_dot_v, alpha2)));
    let cos_d = 0.5 * (l.dot(h) + v.dot(h));
    let f = schlick(F0_SCALE * spec, cos_d);
    d * f * g / (4.0 * (n_dot_l * n_dot_v))
}

/// `cos(theta_l)` against the macro-surface normal, clamped to [0, 1].
#[inline]
pub fn cosine_weight(l: Direction) -> f64 {
    l.vec().z.clamp(0.0, 1.0)
}

/// Shades every pixel: `albedo / pi + ggx_specular(...)`, per albedo channel.
pub fn shade(m: &MapStack, albedo: &ImageGrid, l: Direction, v: Direction) -> Result<RadianceImage> {
    m.check_size(albedo.width(), albedo.height(), "albedo")?;
    let (w, c) = (m.width(), albedo.channels());
    let mut values = vec![0.0; m.pixel_count() * c];
    values.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let i = y * w + x;
            let s = ggx_specular(
                m.normals.vectors()[i],
                m.specular.data()[i],
                m.roughness.data()[i],
                l,
                v,
            );
            for (ch, a) in albedo.pixel(i).iter().enumerate() {
                row[x * c + ch] = a / PI + s;
            }
        }
    });
    Ok(RadianceImage { width: w, height: m.height(), channels: c, values })
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Orthonormal frame around a unit vector.
fn frame(n: Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let t = (a - n * n.dot(a)).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
    let b = Vec3::new(n.y * t.z - n.z * t.y, n.z * t.x - n.x * t.z, n.x * t.y - n.y * t.x);
    (t, b)
}

/// Deterministic light/view set from a randomly rotated 4-D Halton sequence.
///
/// Each point is read as a half-vector (cosine-weighted colatitude) plus a
/// difference angle; the light is placed at that angle from the half vector
/// and the view is its mirror image. Pairs near the horizon are skipped.
pub fn sample_render_set(n: usize, seed: u64) -> Result<RenderSet> {
    if n == 0 {
        return Err(Error::EmptyRenderSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let mut pairs = Vec::with_capacity(n);
    let mut index = 1u64;
    while pairs.len() < n {
        let u: [f64; 4] = std::array::from_fn(|k| {
            (radical_inverse(index, [2, 3, 5, 7][k]) + shift[k]).fract()
        });
        index += 1;
        let cos_h = (1.0 - u[0]).sqrt();
        let sin_h = u[0].sqrt();
        let phi_h = 2.0 * PI * u[1];
        let h = Vec3::new(sin_h * phi_h.cos(), sin_h * phi_h.sin(), cos_h);
        let theta_d = MAX_DIFFERENCE_ANGLE * u[2];
        let phi_d = 2.0 * PI * u[3];
        let (t, b) = frame(h);
        let l = h * theta_d.cos() + (t * phi_d.cos() + b * phi_d.sin()) * theta_d.sin();
        let v = h * (2.0 * l.dot(h)) - l;
        if l.z < MIN_SAMPLED_ELEVATION_COS || v.z < MIN_SAMPLED_ELEVATION_COS {
            continue;
        }
        pairs.push(LightView { light: Direction::new(l)?, view: Direction::new(v)? });
    }
    RenderSet::new(pairs)
}

/// Fixed hemispherical light set of the simulated scanner: a Fibonacci
/// spiral, uniform in solid angle.
pub fn scan_lights() -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..SCAN_LIGHT_COUNT)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / SCAN_LIGHT_COUNT as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Direction::new(Vec3::new(r * phi.cos(), r * phi.sin(), z)).expect("scan light above horizon")
        })
        .collect()
}

/// Simulated diffuse scan: the stack lit by [`scan_lights`] seen from
/// straight above, each light weighted by the local `max(n.l, 0)`, scaled so
/// that a flat diffuse pixel reproduces its base color, then clamped to [0, 1].
pub fn render_scan(m: &MapStack, base_color: &ImageGrid) -> Result<ImageGrid> {
    m.check_size(base_color.width(), base_color.height(), "base color")?;
    let lights = scan_lights();
    let view = Direction::up();
    // Fixed-order sum, so every caller gets the same normalization bits.
    let flat_weight: f64 = lights.iter().map(|l| l.vec().z).sum();
    let scale = PI / flat_weight;
    let (w, c) = (m.width(), base_color.channels());
    let mut data = vec![0.0; m.pixel_count() * c];
    data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let i = y * w + x;
            let n = m.normals.vectors()[i];
            let (spec, rough) = (m.specular.data()[i], m.roughness.data()[i]);
            let mut diffuse_w = 0.0;
            let mut specular = 0.0;
            for &l in &lights {
                let n_dot_l = n.dot(l.vec()).max(0.0);
                diffuse_w += n_dot_l;
                specular += n_dot_l * ggx_specular(n, spec, rough, l, view);
            }
            for (ch, a) in base_color.pixel(i).iter().enumerate() {
                let radiance = diffuse_w * a / PI + specular;
                row[x * c + ch] = (scale * radiance).clamp(0.0, 1.0);
            }
        }
    });
    ImageGrid::new(w, m.height(), c, data, base_color.ppi())
}
