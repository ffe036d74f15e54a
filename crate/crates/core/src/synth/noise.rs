//! Hash-based lattice noise.

use crate::math::mix_seed;

#[inline]
fn hash2(seed: u64, i: i64, j: i64) -> u64 {
    mix_seed(mix_seed(seed, i as u64), j as u64)
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated random lattice values in [0, 1].
pub(crate) struct ValueNoise {
    seed: u64,
    inv_scale: f64,
}

impl ValueNoise {
    /// `scale` is the lattice spacing in pixels.
    pub fn new(seed: u64, scale: f64) -> Self {
        Self { seed, inv_scale: 1.0 / scale }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let (u, v) = (x * self.inv_scale, y * self.inv_scale);
        let (i, j) = (u.floor() as i64, v.floor() as i64);
        let fade = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tu, tv) = (fade(u - u.floor()), fade(v - v.floor()));
        let c = |di, dj| unit(hash2(self.seed, i + di, j + dj));
        let top = c(0, 0) + (c(1, 0) - c(0, 0)) * tu;
        let bottom = c(0, 1) + (c(1, 1) - c(0, 1)) * tu;
        top + (bottom - top) * tv
    }
}

/// Jittered-grid cellular noise with unit cell spacing.
pub(crate) struct Voronoi {
    seed: u64,
}

impl Voronoi {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Distances to the nearest and second-nearest feature points.
    pub fn distances(&self, u: f64, v: f64) -> (f64, f64) {
        let (i, j) = (u.floor() as i64, v.floor() as i64);
        let (mut f1, mut f2) = (f64::INFINITY, f64::INFINITY);
        for dj in -1..=1 {
            for di in -1..=1 {
                let h = hash2(self.seed, i + di, j + dj);
                let px = (i + di) as f64 + unit(h);
                let py = (j + dj) as f64 + unit(mix_seed(h, 1));
                let d = ((px - u).powi(2) + (py - v).powi(2)).sqrt();
                if d < f1 {
                    f2 = f1;
                    f1 = d;
                } else if d < f2 {
                    f2 = d;
                }
            }
        }
        (f1, f2)
    }
}
