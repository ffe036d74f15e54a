//! Monte-Carlo dropout sampling and the render-space uncertainty metric.
//!
//! For a set of sampled stacks `U`, the metric renders every sample under
//! each (light, view) pair with a constant grey albedo, weights by the light
//! cosine, takes the pixel-wise standard deviation across samples and
//! aggregates per pixel as `log((1/|S|) * sqrt(sum_S cbrt(std)))`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{write_json, write_png16};
use crate::material::{ImageGrid, MapStack};
use crate::math::{mix_seed, population_std};
use crate::render::{cosine_weight, ggx_specular, RenderSet};

pub const DEFAULT_DROPOUT_RATE: f64 = 0.2;
pub const DEFAULT_MC_SAMPLES: usize = 16;
pub const DEFAULT_EPS: f64 = 1e-12;
/// Linear grey of the constant albedo used by render-space metrics.
pub const NEUTRAL_GREY: f64 = 0.5;

/// A model that maps an input image to a map stack and can optionally run
/// with random dropout masks.
pub trait StochasticPredictor {
    fn predict_deterministic(&self, input: &ImageGrid) -> Result<MapStack>;

    /// `None` when the model has no stochastic mode.
    fn dropout_rate(&self) -> Option<f64>;

    fn predict_stochastic(&self, input: &ImageGrid, seed: u64) -> Result<MapStack>;

    /// One stochastic pass per seed. Implementations may share work across
    /// passes but must return exactly what per-seed calls would.
    fn predict_samples(&self, input: &ImageGrid, seeds: &[u64]) -> Result<Vec<MapStack>> {
        seeds.iter().map(|&s| self.predict_stochastic(input, s)).collect()
    }
}

/// N sampled predictions for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<MapStack>,
    /// SHA-256 prefix of the input pixels the samples were drawn from.
    pub source: String,
    pub dropout_rate: f64,
}

impl SampleSet {
    pub fn new(samples: Vec<MapStack>, source: impl Into<String>, dropout_rate: f64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
        };
        for s in &samples[1..] {
            first.check_size(s.width(), s.height(), "sample")?;
        }
        Ok(Self { samples, source: source.into(), dropout_rate })
    }

    pub fn samples(&self) -> &[MapStack] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.samples[0].width()
    }

    pub fn height(&self) -> usize {
        self.samples[0].height()
    }

    fn require(&self, needed: usize) -> Result<()> {
        if self.samples.len() < needed {
            return Err(Error::NotEnoughSamples { needed, got: self.samples.len() });
        }
        Ok(())
    }
}

/// Seed of the `index`-th Monte-Carlo pass.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

fn input_digest(input: &ImageGrid) -> String {
    let mut h = Sha256::new();
    h.update((input.width() as u64).to_le_bytes());
    h.update((input.height() as u64).to_le_bytes());
    for v in input.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Runs `n` stochastic passes with masks derived from `(seed, index)`.
pub fn mc_sample<P: StochasticPredictor + ?Sized>(
    predictor: &P,
    input: &ImageGrid,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    let rate = predictor.dropout_rate().ok_or(Error::NotStochastic)?;
    if n == 0 {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let seeds: Vec<u64> = (0..n).map(|j| sample_seed(seed, j)).collect();
    let samples = predictor.predict_samples(input, &seeds)?;
    SampleSet::new(samples, input_digest(input), rate)
}

/// Pixel-wise population standard deviation of each map.
#[derive(Debug, Clone, PartialEq)]
pub struct PerMapStd {
    /// Component-wise std, combined as an L2 norm.
    pub normals: ImageGrid,
    pub specular: ImageGrid,
    pub roughness: ImageGrid,
}

pub fn per_map_std(u: &SampleSet) -> Result<PerMapStd> {
    u.require(2)?;
    let n = u.width() * u.height();
    let ppi = u.samples[0].ppi();
    let mut buf = vec![0.0; u.len()];
    let mut std_of = |get: &dyn Fn(&MapStack, usize) -> f64, i: usize| {
        for (b, s) in buf.iter_mut().zip(&u.samples) {
            *b = get(s, i);
        }
        population_std(&buf)
    };
    let mut normals = Vec::with_capacity(n);
    let mut specular = Vec::with_capacity(n);
    let mut roughness = Vec::with_capacity(n);
    for i in 0..n {
        let sx = std_of(&|s, i| s.normals.vectors()[i].x, i);
        let sy = std_of(&|s, i| s.normals.vectors()[i].y, i);
        let sz = std_of(&|s, i| s.normals.vectors()[i].z, i);
        normals.push((sx * sx + sy * sy + sz * sz).sqrt());
        specular.push(std_of(&|s, i| s.specular.data()[i], i));
        roughness.push(std_of(&|s, i| s.roughness.data()[i], i));
    }
    let (w, h) = (u.width(), u.height());
    Ok(PerMapStd {
        normals: ImageGrid::new(w, h, 1, normals, ppi)?,
        specular: ImageGrid::new(w, h, 1, specular, ppi)?,
        roughness: ImageGrid::new(w, h, 1, roughness, ppi)?,
    })
}

/// Where the `1/|S|` factor sits relative to the square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaForm {
    /// `(1/|S|) * sqrt(sum)`, the default.
    #[default]
    Printed,
    /// `sqrt(sum / |S|)`, for sensitivity analysis only.
    MeanInside,
}

/// Render-space uncertainty: the pixel mean of the log map and the map.
pub fn sigma_brdf(u: &SampleSet, s: &RenderSet, k: &ImageGrid, eps: f64) -> Result<(f64, ImageGrid)> {
    sigma_brdf_with(u, s, k, eps, SigmaForm::Printed)
}

pub fn sigma_brdf_with(
    u: &SampleSet,
    s: &RenderSet,
    k: &ImageGrid,
    eps: f64,
    form: SigmaForm,
) -> Result<(f64, ImageGrid)> {
    u.require(2)?;
    if s.is_empty() {
        return Err(Error::EmptyRenderSet);
    }
    if k.channels() != 1 {
        return Err(Error::DimensionMismatch("albedo must be single-channel".into()));
    }
    u.samples[0].check_size(k.width(), k.height(), "albedo")?;
    if !(eps > 0.0) {
        return Err(Error::InvalidValue(format!("eps {eps} must be positive")));
    }
    let w = u.width();
    let count = s.len() as f64;
    let inv_pi = std::f64::consts::FRAC_1_PI;
    let mut out = vec![0.0; w * u.height()];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut vals = vec![0.0; u.len()];
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let albedo = k.data()[i] * inv_pi;
            let mut acc = 0.0;
            for p in s.pairs() {
                let c = cosine_weight(p.light);
                for (v, m) in vals.iter_mut().zip(&u.samples) {
                    let spec = ggx_specular(
                        m.normals.vectors()[i],
                        m.specular.data()[i],
                        m.roughness.data()[i],
                        p.light,
                        p.view,
                    );
                    *v = (albedo + spec) * c;
                }
                acc += population_std(&vals).cbrt();
            }
            let inner = match form {
                SigmaForm::Printed => acc.sqrt() / count,
                SigmaForm::MeanInside => (acc / count).sqrt(),
            };
            *o = inner.max(eps).ln();
        }
    });
    let map = ImageGrid::new(w, u.height(), 1, out, u.samples[0].ppi())?;
    let mean = map.mean();
    Ok((mean, map))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub sigma_normals: ImageGrid,
    pub sigma_spec: ImageGrid,
    pub sigma_rough: ImageGrid,
    pub sigma_brdf_map: ImageGrid,
    pub sigma_brdf: f64,
}

pub fn build_report(u: &SampleSet, s: &RenderSet, k: &ImageGrid, eps: f64) -> Result<UncertaintyReport> {
    let std = per_map_std(u)?;
    let (sigma, map) = sigma_brdf(u, s, k, eps)?;
    Ok(UncertaintyReport {
        sigma_normals: std.normals,
        sigma_spec: std.specular,
        sigma_rough: std.roughness,
        sigma_brdf_map: map,
        sigma_brdf: sigma,
    })
}

/// Scalar part of a serialized report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub sigma_brdf: f64,
    pub n: usize,
    pub eps: f64,
    pub dropout_rate: f64,
    pub render_set_hash: String,
    pub sigma_normals_mean: f64,
    pub sigma_spec_mean: f64,
    pub sigma_rough_mean: f64,
    /// Affine range used to store the log map in `sigma_brdf.png`.
    pub log_map_min: f64,
    pub log_map_max: f64,
}

/// Writes the four maps as 16-bit PNGs and the scalars as `uncertainty.json`.
/// Std maps are stored as-is (clamped to [0, 1]); the log map is rescaled to
/// [0, 1] using its own min/max, which are recorded in the JSON.
pub fn write_report(
    dir: &Path,
    report: &UncertaintyReport,
    u: &SampleSet,
    s: &RenderSet,
    eps: f64,
) -> Result<ReportSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png16(&dir.join("sigma_normals.png"), &report.sigma_normals)?;
    write_png16(&dir.join("sigma_spec.png"), &report.sigma_spec)?;
    write_png16(&dir.join("sigma_rough.png"), &report.sigma_rough)?;
    let (lo, hi) = report.sigma_brdf_map.min_max();
    let span = hi - lo;
    let normalized = report
        .sigma_brdf_map
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })?;
    write_png16(&dir.join("sigma_brdf.png"), &normalized)?;
    let summary = ReportSummary {
        sigma_brdf: report.sigma_brdf,
        n: u.len(),
        eps,
        dropout_rate: u.dropout_rate,
        render_set_hash: s.hash(),
        sigma_normals_mean: report.sigma_normals.mean(),
        sigma_spec_mean: report.sigma_spec.mean(),
        sigma_rough_mean: report.sigma_rough.mean(),
        log_map_min: lo,
        log_map_max: hi,
    };
    write_json(&dir.join("uncertainty.json"), &summary)?;
    Ok(summary)
}
