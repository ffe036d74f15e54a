//! Procedural textile materials: a microgeometry height field per family,
//! maps derived from it, and a simulated flatbed scan.

mod augment;
mod dataset;
mod noise;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, rescale, rotate, rotate_quarter, AugmentPolicy, QuarterTurns};
pub use dataset::{load_dataset, make_dataset, save_dataset, Dataset, ManifestEntry, Split};

use crate::error::{Error, Result};
use crate::material::{ImageGrid, MapStack, NormalMap};
use crate::math::{mix_seed, Vec3};
use crate::render::render_scan;
use noise::{ValueNoise, Voronoi};

pub const MIN_SIZE: usize = 64;
pub const DEFAULT_SIZE: usize = 128;
pub const DEFAULT_PPI: f64 = 200.0;
const MM_PER_INCH: f64 = 25.4;
const MIN_ROUGHNESS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialFamily {
    PlainWeave,
    Twill,
    Satin,
    JerseyKnit,
    RibKnit,
    LeatherGrain,
}

/// Closed range a generator parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn draw(self, rng: &mut impl Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

/// Generator parameter ranges of one family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    /// Repeat length of the construction, millimetres.
    pub period_mm: Range,
    /// Relief height as a fraction of the period.
    pub amplitude: Range,
    pub spec_base: Range,
    pub rough_base: Range,
    /// Map swing tied to the height field.
    pub spec_var: Range,
    pub rough_var: Range,
    /// Fine fibre noise added to the height field.
    pub noise: Range,
}

impl MaterialFamily {
    pub const ALL: [MaterialFamily; 6] = [
        MaterialFamily::PlainWeave,
        MaterialFamily::Twill,
        MaterialFamily::Satin,
        MaterialFamily::JerseyKnit,
        MaterialFamily::RibKnit,
        MaterialFamily::LeatherGrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaterialFamily::PlainWeave => "plain_weave",
            MaterialFamily::Twill => "twill",
            MaterialFamily::Satin => "satin",
            MaterialFamily::JerseyKnit => "jersey_knit",
            MaterialFamily::RibKnit => "rib_knit",
            MaterialFamily::LeatherGrain => "leather_grain",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).expect("listed family")
    }

    pub fn params(self) -> FamilyParams {
        let r = Range::new;
        match self {
            MaterialFamily::PlainWeave => FamilyParams {
                period_mm: r(0.8, 1.4),
                amplitude: r(0.15, 0.3),
                spec_base: r(0.2, 0.4),
                rough_base: r(0.55, 0.75),
                spec_var: r(0.05, 0.12),
                rough_var: r(0.05, 0.12),
                noise: r(0.04, 0.1),
            },
            MaterialFamily::Twill => FamilyParams {
                period_mm: r(0.7, 1.2),
                amplitude: r(0.15, 0.3),
                spec_base: r(0.25, 0.45),
                rough_base: r(0.45, 0.65),
                spec_var: r(0.05, 0.12),
                rough_var: r(0.05, 0.12),
                noise: r(0.04, 0.1),
            },
            MaterialFamily::Satin => FamilyParams {
                period_mm: r(0.6, 1.0),
                amplitude: r(0.1, 0.2),
                spec_base: r(0.7, 0.9),
                rough_base: r(0.12, 0.28),
                spec_var: r(0.08, 0.15),
                rough_var: r(0.04, 0.1),
                noise: r(0.02, 0.06),
            },
            MaterialFamily::JerseyKnit => FamilyParams {
                period_mm: r(1.0, 1.6),
                amplitude: r(0.2, 0.35),
                spec_base: r(0.15, 0.35),
                rough_base: r(0.6, 0.8),
                spec_var: r(0.04, 0.1),
                rough_var: r(0.05, 0.12),
                noise: r(0.05, 0.12),
            },
            MaterialFamily::RibKnit => FamilyParams {
                period_mm: r(1.0, 1.5),
                amplitude: r(0.2, 0.35),
                spec_base: r(0.15, 0.3),
                rough_base: r(0.65, 0.85),
                spec_var: r(0.04, 0.1),
                rough_var: r(0.05, 0.12),
                noise: r(0.05, 0.12),
            },
            MaterialFamily::LeatherGrain => FamilyParams {
                period_mm: r(1.5, 2.5),
                amplitude: r(0.05, 0.12),
                spec_base: r(0.45, 0.7),
                rough_base: r(0.3, 0.5),
                spec_var: r(0.08, 0.18),
                rough_var: r(0.06, 0.14),
                noise: r(0.08, 0.16),
            },
        }
    }
}

impl fmt::Display for MaterialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaterialFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnsupportedFamily(s.to_string()))
    }
}

/// One generated (or loaded) material with its simulated scan.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSample {
    pub id: usize,
    pub name: String,
    pub family: MaterialFamily,
    pub gt: MapStack,
    pub scan: ImageGrid,
    /// Albedo the scan was rendered with.
    pub base_color: ImageGrid,
    pub seed: u64,
    pub ppi: f64,
}

impl MaterialSample {
    pub fn width(&self) -> usize {
        self.gt.width()
    }

    pub fn height(&self) -> usize {
        self.gt.height()
    }
}

/// Drawn parameters of a single material.
struct Draw {
    period_px: f64,
    angle: f64,
    phase: (f64, f64),
    amplitude: f64,
    spec_base: f64,
    rough_base: f64,
    spec_var: f64,
    rough_var: f64,
    noise: f64,
    color: [f64; 3],
}

impl Draw {
    fn new(family: MaterialFamily, ppi: f64, rng: &mut ChaCha8Rng) -> Self {
        let p = family.params();
        let period_px = p.period_mm.draw(rng) * ppi / MM_PER_INCH;
        Self {
            period_px,
            angle: (rng.random::<f64>() - 0.5) * PI / 6.0,
            phase: (rng.random(), rng.random()),
            amplitude: p.amplitude.draw(rng),
            spec_base: p.spec_base.draw(rng),
            rough_base: p.rough_base.draw(rng),
            spec_var: p.spec_var.draw(rng),
            rough_var: p.rough_var.draw(rng),
            noise: p.noise.draw(rng),
            color: hsv_to_rgb(rng.random(), 0.2 + 0.6 * rng.random::<f64>(), 0.35 + 0.55 * rng.random::<f64>()),
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Rounded yarn cross-section, 0 at the yarn edges and 1 on its axis.
#[inline]
fn yarn(t: f64) -> f64 {
    (PI * t).sin().max(0.0).sqrt()
}

/// Interlaced yarns: the warp (running along v) is on top where `warp_up`.
fn woven(fu: f64, fv: f64, warp_up: bool, float_bulge: bool) -> f64 {
    if warp_up {
        let along = if float_bulge { 1.0 } else { 0.75 + 0.25 * yarn(fv) };
        0.5 + 0.5 * yarn(fu) * along
    } else {
        0.5 + 0.5 * yarn(fv) * (0.75 + 0.25 * yarn(fu))
    }
}

/// Knit loop: two inclined legs forming a V inside the cell.
fn knit_loop(fu: f64, fv: f64) -> f64 {
    let leg = |center: f64| (1.0 - (fu - center).abs() / 0.22).max(0.0).sqrt();
    leg(0.3 - 0.18 * (fv - 0.5)).max(leg(0.7 + 0.18 * (fv - 0.5)))
}

/// Height field in [0, 1] sampled in pattern units (one unit per period).
fn pattern_height(family: MaterialFamily, u: f64, v: f64, cells: &Voronoi) -> f64 {
    let (i, j) = (u.floor() as i64, v.floor() as i64);
    let (fu, fv) = (u - u.floor(), v - v.floor());
    match family {
        MaterialFamily::PlainWeave => woven(fu, fv, (i + j).rem_euclid(2) == 0, false),
        MaterialFamily::Twill => woven(fu, fv, (i - j).rem_euclid(3) != 0, false),
        MaterialFamily::Satin => woven(fu, fv, (2 * i + j).rem_euclid(5) != 0, true),
        MaterialFamily::JerseyKnit => knit_loop(fu, fv),
        MaterialFamily::RibKnit => {
            let rib = 0.5 + 0.5 * (PI * u).cos();
            0.65 * rib + 0.35 * knit_loop(fu, fv)
        }
        MaterialFamily::LeatherGrain => {
            let (f1, f2) = cells.distances(u, v);
            smoothstep(0.0, 0.35, f2 - f1)
        }
    }
}

#[inline]
fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// 3x3 binomial blur with replicate padding.
fn soften(h: &[f64], w: usize, ht: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| h[y.clamp(0, ht as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let k = [1.0, 2.0, 1.0];
    let mut out = vec![0.0; h.len()];
    for y in 0..ht as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (dy, ky) in (-1..=1).zip(k) {
                for (dx, kx) in (-1..=1).zip(k) {
                    acc += kx * ky * at(x + dx, y + dy);
                }
            }
            out[y as usize * w + x as usize] = acc / 16.0;
        }
    }
    out
}

/// Unit normals of the surface `z = scale * h` (h sampled per pixel).
fn height_normals(h: &[f64], w: usize, ht: usize, scale: f64) -> Vec<Vec3> {
    let at = |x: isize, y: isize| h[y.clamp(0, ht as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h.len());
    for y in 0..ht as isize {
        for x in 0..w as isize {
            let dx = 0.5 * (at(x + 1, y) - at(x - 1, y)) * scale;
            let dy = 0.5 * (at(x, y + 1) - at(x, y - 1)) * scale;
            out.push(Vec3::new(-dx, -dy, 1.0).normalized().expect("z component is 1"));
        }
    }
    out
}

/// Deterministic material of `family` for `seed`, `size` x `size` pixels.
pub fn generate_material(family: MaterialFamily, seed: u64, size: usize, ppi: f64) -> Result<MaterialSample> {
    if size < MIN_SIZE {
        return Err(Error::InvalidValue(format!("size {size} is below the minimum of {MIN_SIZE}")));
    }
    if !(ppi > 0.0 && ppi.is_finite()) {
        return Err(Error::InvalidValue(format!("ppi {ppi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, family.index() as u64));
    let d = Draw::new(family, ppi, &mut rng);
    let fine = ValueNoise::new(rng.random(), 2.0);
    let cells = Voronoi::new(rng.random());
    let (cos, sin) = (d.angle.cos(), d.angle.sin());
    let n = size * size;

    let mut h = Vec::with_capacity(n);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let u = (cos * xf + sin * yf) / d.period_px + d.phase.0;
            let v = (-sin * xf + cos * yf) / d.period_px + d.phase.1;
            let base = pattern_height(family, u, v, &cells);
            h.push((base + d.noise * (fine.at(xf, yf) - 0.5)).clamp(0.0, 1.0));
        }
    }
    let h = soften(&h, size, size);
    let normals = height_normals(&h, size, size, d.amplitude * d.period_px);

    let spec: Vec<f64> = h.iter().map(|&t| (d.spec_base + d.spec_var * (t - 0.5)).clamp(0.0, 1.0)).collect();
    let rough: Vec<f64> =
        h.iter().map(|&t| (d.rough_base - d.rough_var * (t - 0.5)).clamp(MIN_ROUGHNESS, 1.0)).collect();
    let mut color = Vec::with_capacity(3 * n);
    for &t in &h {
        let shade = 0.55 + 0.45 * t;
        color.extend(d.color.iter().map(|c| c * shade));
    }

    let gt = MapStack::new(
        NormalMap::new(size, size, normals)?,
        ImageGrid::new(size, size, 1, spec, ppi)?,
        ImageGrid::new(size, size, 1, rough, ppi)?,
    )?;
    let base_color = ImageGrid::new(size, size, 3, color, ppi)?;
    let scan = render_scan(&gt, &base_color)?;
    Ok(MaterialSample {
        id: 0,
        name: format!("{}_{seed}", family.name()),
        family,
        gt,
        scan,
        base_color,
        seed,
        ppi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::validate_stack;

    #[test]
    fn generation_is_deterministic() {
        for f in MaterialFamily::ALL {
            let a = generate_material(f, 11, 64, DEFAULT_PPI).unwrap();
            let b = generate_material(f, 11, 64, DEFAULT_PPI).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generated_stacks_are_valid() {
        for f in MaterialFamily::ALL {
            for seed in 0..3 {
                let s = generate_material(f, seed, 64, DEFAULT_PPI).unwrap();
                assert!(validate_stack(&s.gt).is_empty(), "{f} seed {seed}");
                assert!(s.scan.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(s.scan.same_size(&s.base_color));
            }
        }
    }

    #[test]
    fn scan_is_the_render_of_the_stack() {
        let s = generate_material(MaterialFamily::Twill, 5, 64, DEFAULT_PPI).unwrap();
        assert_eq!(render_scan(&s.gt, &s.base_color).unwrap(), s.scan);
    }

    #[test]
    fn families_differ() {
        let a = generate_material(MaterialFamily::PlainWeave, 1, 64, DEFAULT_PPI).unwrap();
        let b = generate_material(MaterialFamily::Satin, 1, 64, DEFAULT_PPI).unwrap();
        assert_ne!(a.gt, b.gt);
    }

    #[test]
    fn satin_is_shinier_than_plain_weave() {
        let mean = |f| {
            (0..50u64)
                .map(|s| generate_material(f, s, 64, DEFAULT_PPI).unwrap().gt.specular.mean())
                .sum::<f64>()
                / 50.0
        };
        assert!(mean(MaterialFamily::Satin) > mean(MaterialFamily::PlainWeave));
    }

    #[test]
    fn rejects_small_sizes_and_unknown_families() {
        assert!(generate_material(MaterialFamily::Twill, 0, 32, DEFAULT_PPI).is_err());
        assert!(matches!("crepe".parse::<MaterialFamily>(), Err(Error::UnsupportedFamily(_))));
        assert_eq!("rib_knit".parse::<MaterialFamily>().unwrap(), MaterialFamily::RibKnit);
    }

    #[test]
    fn parameter_ranges_are_sane() {
        for f in MaterialFamily::ALL {
            let p = f.params();
            for r in [p.period_mm, p.amplitude, p.spec_base, p.rough_base, p.spec_var, p.rough_var, p.noise] {
                assert!(r.lo < r.hi && r.lo >= 0.0, "{f}");
            }
            for r in [p.spec_base, p.rough_base] {
                assert!(r.hi <= 1.0, "{f}");
            }
        }
    }
}
